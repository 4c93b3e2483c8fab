//! PNG storage of samples: `<root>/images/NNNN.png` (8-bit RGB) and
//! `<root>/masks/NNNN.png` (8-bit class indices), paired by numeric stem.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::dataset::{quantize, Mask, SegmentationSample};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image { path: path.to_path_buf(), source }
}

pub fn save_image(image: &Tensor, path: &Path) -> Result<()> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("save_image", format!("expected 1x3xHxW, got {s}")));
    }
    let buf: RgbImage = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        Rgb(std::array::from_fn(|c| quantize(image.at(0, c, y as usize, x as usize))))
    });
    buf.save(path).map_err(image_err(path))
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let buf = GrayImage::from_raw(mask.width as u32, mask.height as u32, mask.data.clone())
        .expect("mask length matches its size");
    buf.save(path).map_err(image_err(path))
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}

pub fn load_mask(path: &Path, num_classes: usize) -> Result<Mask> {
    let img = image::open(path).map_err(image_err(path))?;
    let gray: ImageBuffer<Luma<u8>, Vec<u8>> = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("mask must be 8-bit single-channel, found {:?}", other.color()),
            })
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.into_raw();
    if let Some(bad) = data.iter().find(|&&c| c as usize >= num_classes) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("class index {bad} out of range for {num_classes} classes"),
        });
    }
    Mask::new(h, w, data)
}

fn stem_name(index: usize) -> String {
    format!("{index:04}.png")
}

/// Writes `images/NNNN.png` and `masks/NNNN.png` under `root`.
pub fn save_sample(root: &Path, index: usize, sample: &SegmentationSample) -> Result<()> {
    for sub in ["images", "masks"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    save_image(&sample.image, &root.join("images").join(stem_name(index)))?;
    save_mask(&sample.mask, &root.join("masks").join(stem_name(index)))
}

pub fn load_sample(image: &Path, mask: &Path, num_classes: usize) -> Result<SegmentationSample> {
    let img = load_image(image)?;
    let mask = load_mask(mask, num_classes)?;
    SegmentationSample::new(img, mask, num_classes).map_err(|e| Error::Format {
        path: image.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn save_samples(root: &Path, samples: &[SegmentationSample]) -> Result<()> {
    samples.iter().enumerate().try_for_each(|(i, s)| save_sample(root, i, s))
}

fn numbered_pngs(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
            out.push((n, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Image/mask pairs under `root`, matched by numeric stem and ordered by it.
pub fn discover_pairs(root: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let images = numbered_pngs(&root.join("images"))?;
    let masks = numbered_pngs(&root.join("masks"))?;
    let mut pairs = Vec::with_capacity(images.len());
    let mut mi = masks.iter().peekable();
    for (n, img) in images {
        while mi.peek().is_some_and(|(m, _)| *m < n) {
            mi.next();
        }
        match mi.peek() {
            Some((m, mask)) if *m == n => pairs.push((img, mask.clone())),
            _ => {
                return Err(Error::Format {
                    path: img,
                    msg: "no mask with a matching numeric stem".into(),
                })
            }
        }
    }
    Ok(pairs)
}

pub fn load_dir(root: &Path, num_classes: usize) -> Result<Vec<SegmentationSample>> {
    discover_pairs(root)?
        .iter()
        .map(|(img, mask)| load_sample(img, mask, num_classes))
        .collect()
}
