use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Axis-aligned box `(x, y, w, h)` in unit-square coordinates, y pointing down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[T; 4]", into = "[T; 4]")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct BBox<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> From<[T; 4]> for BBox<T> {
    fn from([x, y, w, h]: [T; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl<T: Scalar> From<BBox<T>> for [T; 4] {
    fn from(b: BBox<T>) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl<T: Scalar> BBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> T {
        self.x + self.w
    }

    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    /// Positive extent inside the unit square.
    pub fn is_valid(&self) -> bool {
        let eps = T::of(1e-12);
        self.x >= T::zero()
            && self.y >= T::zero()
            && self.w > T::zero()
            && self.h > T::zero()
            && self.right() <= T::one() + eps
            && self.bottom() <= T::one() + eps
    }

    pub fn intersection(&self, other: &Self) -> T {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= T::zero() || ih <= T::zero() {
            T::zero()
        } else {
            iw * ih
        }
    }

    /// Overlap length of the two x-ranges.
    pub fn x_overlap(&self, other: &Self) -> T {
        (self.right().min(other.right()) - self.x.max(other.x)).max(T::zero())
    }

    /// Chebyshev gap between the boxes; zero when they touch or overlap.
    pub fn gap(&self, other: &Self) -> T {
        let dx = (other.x - self.right()).max(self.x - other.right()).max(T::zero());
        let dy = (other.y - self.bottom()).max(self.y - other.bottom()).max(T::zero());
        dx.max(dy)
    }

    /// `self` lies entirely within `outer`.
    pub fn inside(&self, outer: &Self) -> bool {
        self.x >= outer.x
            && self.y >= outer.y
            && self.right() <= outer.right()
            && self.bottom() <= outer.bottom()
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection(b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        T::zero()
    } else {
        (inter / union).min(T::one())
    }
}
