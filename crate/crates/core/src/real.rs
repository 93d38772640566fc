//! Floating-point scalar abstraction shared by every kernel.

use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::{Arc, Mutex, OnceLock};

use num_traits::{Float, FloatConst, NumAssign};
use serde::{Deserialize, Serialize};

use crate::fft::FftPlan;

/// Storage precision of tensors, datasets and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "f32" | "real32" => Ok(Precision::F32),
            "f64" | "real64" => Ok(Precision::F64),
            other => Err(crate::Error::Invalid(format!("unknown precision `{other}`"))),
        }
    }
}

type PlanCache<T> = Mutex<HashMap<usize, Arc<FftPlan<T>>>>;

pub trait Real:
    Float
    + FloatConst
    + Default
    + Debug
    + Display
    + Sum
    + NumAssign
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[doc(hidden)]
    fn plan_cache() -> &'static PlanCache<Self>;

    /// Shared FFT plan for length `n`.
    fn plan(n: usize) -> Arc<FftPlan<Self>> {
        let mut cache = Self::plan_cache().lock().expect("fft plan cache poisoned");
        cache
            .entry(n)
            .or_insert_with(|| Arc::new(FftPlan::new(n)))
            .clone()
    }
}

macro_rules! impl_real {
    ($t:ty, $p:expr, $w:expr) => {
        impl Real for $t {
            const PRECISION: Precision = $p;

            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; $w];
                buf.copy_from_slice(&bytes[..$w]);
                <$t>::from_le_bytes(buf)
            }

            fn plan_cache() -> &'static PlanCache<Self> {
                static CACHE: OnceLock<PlanCache<$t>> = OnceLock::new();
                CACHE.get_or_init(|| Mutex::new(HashMap::new()))
            }
        }
    };
}

impl_real!(f32, Precision::F32, 4);
impl_real!(f64, Precision::F64, 8);
