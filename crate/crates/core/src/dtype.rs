//! Element types and their byte encodings.

use std::fmt;
use std::str::FromStr;

use half::bf16;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    U16,
    U32,
    U64,
    U128,
    U256,
    I32,
    Bf16,
    Fp8,
    Fp32,
}

pub const ALL_DTYPES: [DType; 10] = [
    DType::U8,
    DType::U16,
    DType::U32,
    DType::U64,
    DType::U128,
    DType::U256,
    DType::I32,
    DType::Bf16,
    DType::Fp8,
    DType::Fp32,
];

impl DType {
    pub fn bytes(self) -> usize {
        match self {
            DType::U8 | DType::Fp8 => 1,
            DType::U16 | DType::Bf16 => 2,
            DType::U32 | DType::I32 | DType::Fp32 => 4,
            DType::U64 => 8,
            DType::U128 => 16,
            DType::U256 => 32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::U8 => "u8",
            DType::U16 => "u16",
            DType::U32 => "u32",
            DType::U64 => "u64",
            DType::U128 => "u128",
            DType::U256 => "u256",
            DType::I32 => "i32",
            DType::Bf16 => "bf16",
            DType::Fp8 => "fp8",
            DType::Fp32 => "fp32",
        }
    }

    /// Unsigned integer types are raw containers: copies into or out of them
    /// move bytes without numeric conversion.
    pub fn is_raw(self) -> bool {
        matches!(
            self,
            DType::U8 | DType::U16 | DType::U32 | DType::U64 | DType::U128 | DType::U256
        )
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::Bf16 | DType::Fp8 | DType::Fp32)
    }

    /// Decodes one element. Integers wider than 64 bits decode their low
    /// 64 bits.
    pub fn decode(self, b: &[u8]) -> f64 {
        match self {
            DType::Fp32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            DType::Bf16 => bf16::from_le_bytes([b[0], b[1]]).to_f64(),
            DType::Fp8 => fp8_e4m3_decode(b[0]),
            DType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            _ => {
                let mut w = [0u8; 8];
                let n = self.bytes().min(8);
                w[..n].copy_from_slice(&b[..n]);
                u64::from_le_bytes(w) as f64
            }
        }
    }

    /// Encodes one element. Floats round to nearest even; integers truncate
    /// toward zero and wrap to the type width.
    pub fn encode(self, v: f64, out: &mut [u8]) {
        match self {
            DType::Fp32 => out[..4].copy_from_slice(&(v as f32).to_le_bytes()),
            DType::Bf16 => out[..2].copy_from_slice(&bf16::from_f64(v).to_le_bytes()),
            DType::Fp8 => out[0] = fp8_e4m3_encode(v),
            DType::I32 => out[..4].copy_from_slice(&(v as i64 as i32).to_le_bytes()),
            _ => {
                let w = (v as i64 as u64).to_le_bytes();
                let n = self.bytes();
                for (i, o) in out[..n].iter_mut().enumerate() {
                    *o = if i < 8 { w[i] } else { 0 };
                }
            }
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_DTYPES
            .iter()
            .copied()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown element type `{s}`"))
    }
}

pub const FP8_E4M3_MAX: f64 = 448.0;

/// e4m3 without infinities: bias 7, 0x7f/0xff are NaN, largest finite 448.
pub fn fp8_e4m3_decode(code: u8) -> f64 {
    let sign = if code & 0x80 != 0 { -1.0 } else { 1.0 };
    let e = ((code >> 3) & 0x0f) as i32;
    let m = (code & 0x07) as f64;
    if e == 15 && m == 7.0 {
        return f64::NAN;
    }
    let mag = if e == 0 {
        m / 8.0 * 2f64.powi(-6)
    } else {
        (1.0 + m / 8.0) * 2f64.powi(e - 7)
    };
    sign * mag
}

/// Rounds to nearest even; magnitudes past the largest finite value saturate.
pub fn fp8_e4m3_encode(v: f64) -> u8 {
    if v.is_nan() {
        return 0x7f;
    }
    let sign: u8 = if v.is_sign_negative() { 0x80 } else { 0 };
    let a = v.abs();
    if a >= FP8_E4M3_MAX {
        return sign | 0x7e;
    }
    let e = a.log2().floor() as i32;
    let mag = if e < -6 {
        (a * 2f64.powi(9)).round_ties_even() as u8
    } else {
        let scaled = (a * 2f64.powi(3 - e)).round_ties_even() as i32;
        let (e, m) = if scaled >= 16 { (e + 1, 8) } else { (e, scaled) };
        if e + 7 > 15 {
            0x7e
        } else {
            (((e + 7) << 3) | (m - 8)) as u8
        }
    };
    sign | mag.min(0x7e)
}
