//! Matrix-core intrinsic descriptors: which lane and slot holds which
//! operand element, loaded from a text table.
//!
//! Table format, one directive per line, `#` starts a comment:
//!
//! ```text
//! intrinsic <name>
//! shape <m> <n> <k>
//! lanes <lanes> slots <slots> accs <accs>
//! types <operand dtype> <accumulator dtype>
//! A <lane> <slot> <row> <k>
//! B <lane> <slot> <k> <col>
//! C <lane> <acc> <row> <col>
//! ```
//!
//! Every lane/slot pair must appear exactly once per operand and the entries
//! of each operand must cover its matrix exactly once.

use std::collections::HashMap;

use thiserror::Error;

use crate::dtype::DType;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("descriptor line {line}: {message}")]
pub struct DescriptorError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntrinsicDescriptor {
    pub name: String,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub lanes: usize,
    pub slots: usize,
    pub accs: usize,
    pub operand: DType,
    pub accumulator: DType,
    /// `a[lane * slots + slot] = (row, k)`.
    pub a: Vec<(usize, usize)>,
    /// `b[lane * slots + slot] = (k, col)`.
    pub b: Vec<(usize, usize)>,
    /// `c[lane * accs + acc] = (row, col)`.
    pub c: Vec<(usize, usize)>,
}

pub const MFMA_32X32X8_BF16: &str = include_str!("../../../../data/mfma_32x32x8_bf16.txt");

impl IntrinsicDescriptor {
    pub fn parse(text: &str) -> Result<Self, DescriptorError> {
        let err = |line: usize, m: &str| DescriptorError {
            line,
            message: m.to_string(),
        };
        let mut name = None;
        let mut shape = None;
        let mut counts = None;
        let mut types = None;
        let mut entries: HashMap<char, Vec<(usize, [usize; 4])>> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let nums = |range: std::ops::Range<usize>| -> Result<Vec<usize>, DescriptorError> {
                if f.len() != range.end {
                    return Err(err(ln, &format!("expected {} fields", range.end)));
                }
                f[range]
                    .iter()
                    .map(|s| s.parse().map_err(|_| err(ln, &format!("bad number `{s}`"))))
                    .collect()
            };
            match f[0] {
                "intrinsic" if f.len() == 2 => name = Some(f[1].to_string()),
                "shape" => {
                    let v = nums(1..4)?;
                    shape = Some((v[0], v[1], v[2]));
                }
                "lanes" => {
                    if f.len() != 6 || f[2] != "slots" || f[4] != "accs" {
                        return Err(err(ln, "expected `lanes L slots S accs C`"));
                    }
                    let p = |s: &str| s.parse::<usize>().map_err(|_| err(ln, "bad number"));
                    counts = Some((p(f[1])?, p(f[3])?, p(f[5])?));
                }
                "types" if f.len() == 3 => {
                    let a: DType = f[1].parse().map_err(|e: String| err(ln, &e))?;
                    let c: DType = f[2].parse().map_err(|e: String| err(ln, &e))?;
                    types = Some((a, c));
                }
                op @ ("A" | "B" | "C") => {
                    let v = nums(1..5)?;
                    entries
                        .entry(op.chars().next().unwrap())
                        .or_default()
                        .push((ln, [v[0], v[1], v[2], v[3]]));
                }
                other => return Err(err(ln, &format!("unknown directive `{other}`"))),
            }
        }
        let name = name.ok_or_else(|| err(0, "missing `intrinsic` line"))?;
        let (m, n, k) = shape.ok_or_else(|| err(0, "missing `shape` line"))?;
        let (lanes, slots, accs) = counts.ok_or_else(|| err(0, "missing `lanes` line"))?;
        let (operand, accumulator) = types.ok_or_else(|| err(0, "missing `types` line"))?;

        let build = |op: char,
                     per_lane: usize,
                     dims: (usize, usize)|
         -> Result<Vec<(usize, usize)>, DescriptorError> {
            let mut table = vec![None; lanes * per_lane];
            let mut seen = vec![false; dims.0 * dims.1];
            for &(ln, [lane, slot, x, y]) in entries.get(&op).map(|v| v.as_slice()).unwrap_or(&[]) {
                if lane >= lanes || slot >= per_lane {
                    return Err(err(ln, &format!("{op}: lane/slot ({lane}, {slot}) out of range")));
                }
                if x >= dims.0 || y >= dims.1 {
                    return Err(err(ln, &format!("{op}: position ({x}, {y}) out of range")));
                }
                let cell = &mut table[lane * per_lane + slot];
                if cell.is_some() {
                    return Err(err(ln, &format!("{op}: lane {lane} slot {slot} given twice")));
                }
                if seen[x * dims.1 + y] {
                    return Err(err(ln, &format!("{op}: position ({x}, {y}) covered twice")));
                }
                seen[x * dims.1 + y] = true;
                *cell = Some((x, y));
            }
            if let Some(pos) = table.iter().position(Option::is_none) {
                return Err(err(
                    0,
                    &format!("{op}: lane {} slot {} missing", pos / per_lane, pos % per_lane),
                ));
            }
            Ok(table.into_iter().map(Option::unwrap).collect())
        };
        if lanes * slots != m * k || lanes * slots != k * n || lanes * accs != m * n {
            return Err(err(0, "lane and slot counts do not match the matrix shapes"));
        }
        let a = build('A', slots, (m, k))?;
        let b = build('B', slots, (k, n))?;
        let c = build('C', accs, (m, n))?;
        Ok(Self {
            name,
            m,
            n,
            k,
            lanes,
            slots,
            accs,
            operand,
            accumulator,
            a,
            b,
            c,
        })
    }

    /// The shipped 32x32x8 bf16 descriptor.
    pub fn mfma_32x32x8_bf16() -> Self {
        Self::parse(MFMA_32X32X8_BF16).expect("shipped descriptor is valid")
    }
}
