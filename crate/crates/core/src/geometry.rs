//! Axis-aligned box arithmetic.
//!
//! Boxes use the corner format `[x1, y1, x2, y2]`. Construction normalizes
//! swapped corners, so every `BBox` satisfies `x1 <= x2` and `y1 <= y2`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    x1: T,
    y1: T,
    x2: T,
    y2: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }

    /// Builds a box from a COCO-style `[x, y, width, height]` record.
    pub fn from_xywh(x: T, y: T, w: T, h: T) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn from_array(c: [T; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn x1(&self) -> T {
        self.x1
    }

    pub fn y1(&self) -> T {
        self.y1
    }

    pub fn x2(&self) -> T {
        self.x2
    }

    pub fn y2(&self) -> T {
        self.y2
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> Serialize for BBox<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for BBox<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        <[T; 4]>::deserialize(d).map(Self::from_array)
    }
}

pub fn area<T: Scalar>(b: &BBox<T>) -> T {
    b.width() * b.height()
}

pub fn intersection_area<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= T::zero() || h <= T::zero() {
        T::zero()
    } else {
        w * h
    }
}

/// True when `inner` lies inside `outer`. All four comparisons are
/// non-strict, so identical boxes contain each other.
pub fn is_contained<T: Scalar>(inner: &BBox<T>, outer: &BBox<T>) -> bool {
    inner.x1 >= outer.x1 && inner.y1 >= outer.y1 && inner.x2 <= outer.x2 && inner.y2 <= outer.y2
}

/// Share of `bi` covered by `bj`: `A(bi ∩ bj) / A(bi)`. Not symmetric.
pub fn overlap_fraction<T: Scalar>(bi: &BBox<T>, bj: &BBox<T>) -> Result<T> {
    let a = area(bi);
    if a <= T::zero() {
        return Err(Error::ZeroAreaBox { index: 0 });
    }
    Ok(intersection_area(bi, bj) / a)
}

pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> Result<T> {
    let (aa, ab) = (area(a), area(b));
    if aa <= T::zero() && ab <= T::zero() {
        return Err(Error::ZeroAreaBox { index: 0 });
    }
    let inter = intersection_area(a, b);
    Ok(inter / (aa + ab - inter))
}
