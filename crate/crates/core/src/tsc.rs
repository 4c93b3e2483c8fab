//! Translated skip connections and coordinate-channel injection.
//!
//! A translated skip connection merges a decoder feature map `f` with the
//! encoder output `x` it skips over as
//!
//! ```text
//! (f + x) ++ T_left(x, a) ++ T_up(x, a) ++ T_diag(x, a)
//! ```
//!
//! where `++` stacks channels, `T` is a cyclic shift by a fraction `a` of the
//! map size, and `a = l / (D + 1)` for skip level `l` (1 at the bottleneck)
//! of a depth-`D` network.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{add, concat_channels, GradFn, Shape, Tensor};

/// A rational translation factor in `[0, 1)`. Equality is by value, so
/// `3/6 == 1/2`.
#[derive(Clone, Copy, Debug)]
pub struct Fraction {
    num: usize,
    den: usize,
}

impl Fraction {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if den == 0 || num >= den {
            return Err(Error::invalid(format!(
                "translation factor {num}/{den} is outside [0, 1)"
            )));
        }
        Ok(Fraction { num, den })
    }

    pub const ZERO: Fraction = Fraction { num: 0, den: 1 };

    pub fn num(&self) -> usize {
        self.num
    }

    pub fn den(&self) -> usize {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(factor * len)`, halves rounded away from zero, reduced mod `len`.
    pub fn shift(&self, len: usize) -> usize {
        if len == 0 {
            return 0;
        }
        ((2 * self.num * len + self.den) / (2 * self.den)) % len
    }
}

impl PartialEq for Fraction {
    fn eq(&self, other: &Self) -> bool {
        self.num * other.den == other.num * self.den
    }
}

impl Eq for Fraction {}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Direction of a translated copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Left,
    Up,
    DiagUpLeft,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Left, Direction::Up, Direction::DiagUpLeft];

    /// Whether this direction moves rows / columns.
    pub fn moves(&self) -> (bool, bool) {
        match self {
            Direction::Left => (false, true),
            Direction::Up => (true, false),
            Direction::DiagUpLeft => (true, true),
        }
    }

    /// Row and column shift for a `h x w` map.
    pub fn shifts(&self, factor: Fraction, h: usize, w: usize) -> (usize, usize) {
        let (rows, cols) = self.moves();
        (
            if rows { factor.shift(h) } else { 0 },
            if cols { factor.shift(w) } else { 0 },
        )
    }
}

/// One translated copy within a skip connection at `level` of a `depth`-level network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TranslationSpec {
    pub direction: Direction,
    pub factor: Fraction,
    pub level: usize,
    pub depth: usize,
}

impl TranslationSpec {
    /// Factor `level / (depth + 1)`; `level` counts from 1 at the bottleneck.
    pub fn for_level(direction: Direction, level: usize, depth: usize) -> Result<Self> {
        if depth == 0 || level == 0 || level > depth {
            return Err(Error::invalid(format!(
                "skip level {level} outside 1..={depth}"
            )));
        }
        Ok(TranslationSpec {
            direction,
            factor: Fraction::new(level, depth + 1)?,
            level,
            depth,
        })
    }
}

struct TranslateBackward {
    shape: Shape,
    dy: usize,
    dx: usize,
}

impl GradFn for TranslateBackward {
    fn backward(&self, _: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (dy, dx) = (self.shape.h - self.dy, self.shape.w - self.dx);
        vec![Some(roll(grad_out, self.shape, dy % self.shape.h, dx % self.shape.w))]
    }
}

// out[i][j] = x[(i + dy) % h][(j + dx) % w] on every plane.
fn roll(x: &[f64], s: Shape, dy: usize, dx: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for plane in x.chunks(s.plane()) {
        for i in 0..s.h {
            let row = &plane[((i + dy) % s.h) * s.w..][..s.w];
            out.extend_from_slice(&row[dx..]);
            out.extend_from_slice(&row[..dx]);
        }
    }
    out
}

/// Cyclic shift of every `H x W` plane: `Up` moves rows up by
/// `round(factor * H)` with the top rows re-entering at the bottom, `Left`
/// moves columns likewise, `DiagUpLeft` does both.
pub fn translate(x: &Tensor, direction: Direction, factor: Fraction) -> Tensor {
    let s = x.shape();
    let (dy, dx) = direction.shifts(factor, s.h, s.w);
    Tensor::from_op(s, roll(x.data(), s, dy, dx), &[x], TranslateBackward { shape: s, dy, dx })
}

/// Configuration of one translated skip connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TscBlockConfig {
    /// Channels of the skipped encoder output.
    pub channels: usize,
    pub level: usize,
    pub depth: usize,
}

impl TscBlockConfig {
    pub fn new(channels: usize, level: usize, depth: usize) -> Result<Self> {
        TranslationSpec::for_level(Direction::Left, level, depth)?;
        Ok(TscBlockConfig { channels, level, depth })
    }

    pub fn factor(&self) -> Fraction {
        Fraction { num: self.level, den: self.depth + 1 }
    }

    pub fn translations(&self) -> [TranslationSpec; 3] {
        Direction::ALL.map(|direction| TranslationSpec {
            direction,
            factor: self.factor(),
            level: self.level,
            depth: self.depth,
        })
    }

    pub fn out_channels(&self) -> usize {
        4 * self.channels
    }
}

/// `(f_x + x) ++ T_left(x) ++ T_up(x) ++ T_diag(x)`; output has `4C` channels.
pub fn tsc_block(f_x: &Tensor, x: &Tensor, config: &TscBlockConfig) -> Result<Tensor> {
    if f_x.shape() != x.shape() {
        return Err(Error::shape(
            "tsc_block",
            format!("decoder input {} and skipped input {} differ", f_x.shape(), x.shape()),
        ));
    }
    if x.shape().c != config.channels {
        return Err(Error::shape(
            "tsc_block",
            format!("configured for {} channels, got {}", config.channels, x.shape().c),
        ));
    }
    let additive = add(f_x, x)?;
    let [a, b, c] = config.translations().map(|t| translate(x, t.direction, t.factor));
    concat_channels(&[&additive, &a, &b, &c])
}

/// Appends two channels holding `x / W` and `y / H` (zero-based column and
/// row) to every pixel. The coordinate channels are constants.
pub fn coord_inject(image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    let coords = Tensor::from_vec(Shape::new(s.n, 2, s.h, s.w), coordinate_planes(s))?;
    concat_channels(&[image, &coords])
}

fn coordinate_planes(s: Shape) -> Vec<f64> {
    let mut out = Vec::with_capacity(s.n * 2 * s.plane());
    for _ in 0..s.n {
        for _ in 0..s.h {
            out.extend((0..s.w).map(|x| x as f64 / s.w as f64));
        }
        for y in 0..s.h {
            out.extend(std::iter::repeat_n(y as f64 / s.h as f64, s.w));
        }
    }
    out
}
