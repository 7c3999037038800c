use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the linear-algebra side of the crate.
pub trait Real: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static {
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("float conversion")
    }
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
