//! Integer semantics shared by constant folding and index evaluation.
//! Division floors and remainders take the divisor's sign.

use thiserror::Error;

use crate::dsl::ast::BinOp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum IntOpError {
    #[error("division by zero")]
    DivByZero,
    #[error("integer overflow")]
    Overflow,
}

#[inline]
pub fn floor_div(a: i64, b: i64) -> Result<i64, IntOpError> {
    if b == 0 {
        return Err(IntOpError::DivByZero);
    }
    let q = a.checked_div(b).ok_or(IntOpError::Overflow)?;
    Ok(if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    })
}

#[inline]
pub fn floor_mod(a: i64, b: i64) -> Result<i64, IntOpError> {
    if b == 0 {
        return Err(IntOpError::DivByZero);
    }
    let r = a.checked_rem(b).ok_or(IntOpError::Overflow)?;
    Ok(if r != 0 && ((r < 0) != (b < 0)) { r + b } else { r })
}

#[inline]
pub fn apply(op: BinOp, a: i64, b: i64) -> Result<i64, IntOpError> {
    use BinOp::*;
    let ov = IntOpError::Overflow;
    Ok(match op {
        Add => a.checked_add(b).ok_or(ov)?,
        Sub => a.checked_sub(b).ok_or(ov)?,
        Mul => a.checked_mul(b).ok_or(ov)?,
        Div => floor_div(a, b)?,
        Mod => floor_mod(a, b)?,
        And => a & b,
        Or => a | b,
        Xor => a ^ b,
        Shl => {
            if !(0..64).contains(&b) {
                return Err(ov);
            }
            a.checked_shl(b as u32).ok_or(ov)?
        }
        Shr => {
            if !(0..64).contains(&b) {
                return Err(ov);
            }
            a >> b
        }
        Lt => (a < b) as i64,
        Le => (a <= b) as i64,
        Gt => (a > b) as i64,
        Ge => (a >= b) as i64,
        Eq => (a == b) as i64,
        Ne => (a != b) as i64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn python_floor_semantics() {
        assert_eq!(floor_div(7, 2), Ok(3));
        assert_eq!(floor_div(-7, 2), Ok(-4));
        assert_eq!(floor_mod(-7, 2), Ok(1));
        assert_eq!(floor_mod(7, -2), Ok(-1));
        assert_eq!(floor_div(1, 0), Err(IntOpError::DivByZero));
        assert_eq!(apply(BinOp::Shl, 1, 64), Err(IntOpError::Overflow));
        assert_eq!(apply(BinOp::Ge, 3, 3), Ok(1));
    }
}
