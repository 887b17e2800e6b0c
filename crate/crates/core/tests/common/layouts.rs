//! Random layouts and a table-driven linearization oracle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tilecheck::layout::{IntTuple, Layout};

/// Modes of one dimension, first mode fastest, and whether it is nested.
#[derive(Debug, Clone)]
pub struct DimSpec {
    pub modes: Vec<(i64, i64)>,
    pub nested: bool,
}

#[derive(Debug, Clone)]
pub struct LayoutSpec {
    pub dims: Vec<DimSpec>,
}

impl LayoutSpec {
    pub fn size(&self) -> i64 {
        self.dims.iter().flat_map(|d| &d.modes).map(|m| m.0).product()
    }

    pub fn build(&self, element_bytes: u32) -> Layout {
        let tuple = |f: fn(&(i64, i64)) -> i64, d: &DimSpec| {
            if d.nested {
                IntTuple::Tuple(d.modes.iter().map(|m| IntTuple::Int(f(m))).collect())
            } else {
                IntTuple::Int(f(&d.modes[0]))
            }
        };
        let shapes: Vec<IntTuple> = self.dims.iter().map(|d| tuple(|m| m.0, d)).collect();
        let strides: Vec<IntTuple> = self.dims.iter().map(|d| tuple(|m| m.1, d)).collect();
        Layout::make(&shapes, Some(&strides), element_bytes).expect("generated layout is valid")
    }

    pub fn extents(&self) -> Vec<i64> {
        self.dims.iter().map(|d| d.modes.iter().map(|m| m.0).product()).collect()
    }
}

/// Offsets of every coordinate value of one dimension, built by counting
/// through the mode digits with the first mode fastest.
pub fn dim_table(d: &DimSpec) -> Vec<i64> {
    let mut digits = vec![0i64; d.modes.len()];
    let extent: i64 = d.modes.iter().map(|m| m.0).product();
    let mut out = Vec::with_capacity(extent as usize);
    for _ in 0..extent {
        out.push(digits.iter().zip(&d.modes).map(|(x, m)| x * m.1).sum());
        for (x, m) in digits.iter_mut().zip(&d.modes) {
            *x += 1;
            if *x < m.0 {
                break;
            }
            *x = 0;
        }
    }
    out
}

/// Every coordinate in row-major order together with its expected offset.
pub fn oracle_points(spec: &LayoutSpec) -> Vec<(Vec<i64>, i64)> {
    let tables: Vec<Vec<i64>> = spec.dims.iter().map(dim_table).collect();
    let mut pts = vec![(Vec::new(), 0i64)];
    for t in &tables {
        pts = pts
            .into_iter()
            .flat_map(|(c, o)| {
                t.iter().enumerate().map(move |(i, x)| {
                    let mut c = c.clone();
                    c.push(i as i64);
                    (c, o + x)
                })
            })
            .collect();
    }
    pts
}

/// Offset of linear index `i`, dimensions and modes both first fastest.
pub fn index_table(spec: &LayoutSpec) -> Vec<i64> {
    let all = DimSpec {
        modes: spec.dims.iter().flat_map(|d| d.modes.iter().copied()).collect(),
        nested: true,
    };
    dim_table(&all)
}

fn gen_dim(rng: &mut ChaCha8Rng, shapes: &[i64], strides: impl Fn(&mut ChaCha8Rng) -> i64) -> DimSpec {
    let nested = rng.random_bool(0.5);
    let n = if nested { rng.random_range(1..=3) } else { 1 };
    DimSpec {
        modes: (0..n)
            .map(|_| (shapes[rng.random_range(0..shapes.len())], strides(rng)))
            .collect(),
        nested,
    }
}

/// A flat or nested layout of rank 1 to 3 with at most `max_size` elements.
pub fn random_layout(rng: &mut ChaCha8Rng, max_size: i64) -> LayoutSpec {
    loop {
        let rank = rng.random_range(1..=3);
        let spec = LayoutSpec {
            dims: (0..rank)
                .map(|_| gen_dim(rng, &[1, 2, 3, 4, 5, 6, 8, 16], |r| r.random_range(0..=64)))
                .collect(),
        };
        if spec.size() <= max_size {
            return spec;
        }
    }
}

/// Outer and inner layouts built from powers of two, so that composition is
/// usually representable.
pub fn random_composable(rng: &mut ChaCha8Rng) -> (LayoutSpec, LayoutSpec) {
    let pow2 = |r: &mut ChaCha8Rng, hi: u32| 1i64 << r.random_range(0..=hi);
    loop {
        let outer = LayoutSpec {
            dims: (0..rng.random_range(1..=3))
                .map(|_| gen_dim(rng, &[1, 2, 4, 8], |r| pow2(r, 6)))
                .collect(),
        };
        let inner = LayoutSpec {
            dims: (0..rng.random_range(1..=2))
                .map(|_| gen_dim(rng, &[1, 2, 4, 8], |r| if r.random_bool(0.1) { 0 } else { pow2(r, 5) }))
                .collect(),
        };
        let reach: i64 = inner.dims.iter().flat_map(|d| &d.modes).map(|m| (m.0 - 1) * m.1).sum();
        if outer.size() <= 4096 && reach < outer.size() {
            return (outer, inner);
        }
    }
}
