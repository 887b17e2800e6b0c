//! Layout functions: shape/stride pairs mapping logical coordinates to linear
//! element offsets.
//!
//! A [`Layout`] is an ordered list of [`LayoutDim`]s. A flat dimension has one
//! `(shape, stride)` mode and contributes `c * stride`. A nested dimension has
//! several modes; its coordinate wraps around them first-mode-fastest, so a
//! dimension with shapes `(s0, s1)` and strides `(t0, t1)` maps `c` to
//! `(c % s0) * t0 + (c / s0) * t1`.
//!
//! Strides are in units of the layout's own element type. Byte offsets are the
//! element offset multiplied by [`Layout::element_bytes`].

use std::fmt;

use thiserror::Error;

/// Upper bound on the number of elements of a single layout.
pub const MAX_LAYOUT_SIZE: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("shape and stride are not congruent: {0}")]
    ArityMismatch(String),
    #[error("non-positive shape entry {0}")]
    NonPositiveShape(i64),
    #[error("element width must be positive")]
    ZeroElementBytes,
    #[error("layout has {size} elements, exceeding the cap of {cap}")]
    TooLarge { size: u64, cap: u64 },
    #[error("coordinate has {got} components, layout has {expected} dimensions")]
    CoordArity { expected: usize, got: usize },
    #[error("coordinate component {component} = {value} outside [0, {extent})")]
    OutOfDomain {
        component: usize,
        value: i64,
        extent: i64,
    },
    #[error("layout reaches negative offset {0}")]
    NegativeOffset(i64),
    #[error("inner layout reaches offset {needed} but outer layout only has {available} elements")]
    DomainOverflow { needed: i64, available: u64 },
    #[error("composition is not representable as a shape/stride layout: {0}")]
    NotRepresentable(String),
}

/// A possibly nested integer tuple, used to spell shapes and strides.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum IntTuple {
    Int(i64),
    Tuple(Vec<IntTuple>),
}

impl From<i64> for IntTuple {
    fn from(v: i64) -> Self {
        IntTuple::Int(v)
    }
}

impl<const N: usize> From<[i64; N]> for IntTuple {
    fn from(v: [i64; N]) -> Self {
        IntTuple::Tuple(v.iter().map(|&x| IntTuple::Int(x)).collect())
    }
}

impl fmt::Display for IntTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntTuple::Int(v) => write!(f, "{v}"),
            IntTuple::Tuple(items) => {
                write!(f, "(")?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{it}")?;
                }
                if items.len() == 1 {
                    write!(f, ",")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mode {
    pub shape: i64,
    pub stride: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayoutDim {
    modes: Vec<Mode>,
    nested: bool,
}

impl LayoutDim {
    pub fn flat(shape: i64, stride: i64) -> Result<Self, LayoutError> {
        if shape < 1 {
            return Err(LayoutError::NonPositiveShape(shape));
        }
        Ok(Self {
            modes: vec![Mode { shape, stride }],
            nested: false,
        })
    }

    pub fn nested(shapes: &[i64], strides: &[i64]) -> Result<Self, LayoutError> {
        if shapes.is_empty() || shapes.len() != strides.len() {
            return Err(LayoutError::ArityMismatch(format!(
                "{} shapes vs {} strides",
                shapes.len(),
                strides.len()
            )));
        }
        if let Some(&bad) = shapes.iter().find(|&&s| s < 1) {
            return Err(LayoutError::NonPositiveShape(bad));
        }
        Ok(Self {
            modes: shapes
                .iter()
                .zip(strides)
                .map(|(&shape, &stride)| Mode { shape, stride })
                .collect(),
            nested: true,
        })
    }

    /// Nested dimension written with one more stride than shapes: the extra
    /// stride applies to the final quotient. `extent` fixes the dimension's
    /// coordinate range and must be a multiple of the listed shapes.
    pub fn wrapping(shapes: &[i64], strides: &[i64], extent: i64) -> Result<Self, LayoutError> {
        if strides.len() != shapes.len() + 1 {
            return Err(LayoutError::ArityMismatch(format!(
                "wrapping form needs {} strides, got {}",
                shapes.len() + 1,
                strides.len()
            )));
        }
        let inner: i64 = shapes.iter().product();
        if inner < 1 || extent < 1 || extent % inner != 0 {
            return Err(LayoutError::ArityMismatch(format!(
                "extent {extent} is not a multiple of the nested shapes' product {inner}"
            )));
        }
        let mut all = shapes.to_vec();
        all.push(extent / inner);
        Self::nested(&all, strides)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn is_nested(&self) -> bool {
        self.nested
    }

    /// Number of coordinate values this dimension accepts.
    pub fn extent(&self) -> i64 {
        self.modes.iter().map(|m| m.shape).product()
    }

    #[inline]
    pub fn eval(&self, mut c: i64) -> i64 {
        if self.modes.len() == 1 {
            return c * self.modes[0].stride;
        }
        let mut off = 0;
        let last = self.modes.len() - 1;
        for (i, m) in self.modes.iter().enumerate() {
            if i == last {
                off += c * m.stride;
            } else {
                off += (c % m.shape) * m.stride;
                c /= m.shape;
            }
        }
        off
    }

    fn shape_tuple(&self) -> IntTuple {
        if self.nested {
            IntTuple::Tuple(self.modes.iter().map(|m| IntTuple::Int(m.shape)).collect())
        } else {
            IntTuple::Int(self.modes[0].shape)
        }
    }

    fn stride_tuple(&self) -> IntTuple {
        if self.nested {
            IntTuple::Tuple(self.modes.iter().map(|m| IntTuple::Int(m.stride)).collect())
        } else {
            IntTuple::Int(self.modes[0].stride)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Layout {
    dims: Vec<LayoutDim>,
    element_bytes: u32,
}

fn flatten_ints(t: &IntTuple, what: &str) -> Result<Vec<i64>, LayoutError> {
    match t {
        IntTuple::Int(v) => Ok(vec![*v]),
        IntTuple::Tuple(items) => items
            .iter()
            .map(|it| match it {
                IntTuple::Int(v) => Ok(*v),
                IntTuple::Tuple(_) => Err(LayoutError::ArityMismatch(format!(
                    "{what} nests deeper than one level"
                ))),
            })
            .collect(),
    }
}

impl Layout {
    pub fn from_dims(dims: Vec<LayoutDim>, element_bytes: u32) -> Result<Self, LayoutError> {
        if element_bytes == 0 {
            return Err(LayoutError::ZeroElementBytes);
        }
        let layout = Self {
            dims,
            element_bytes,
        };
        let size = layout.size_checked();
        if size > MAX_LAYOUT_SIZE {
            return Err(LayoutError::TooLarge {
                size,
                cap: MAX_LAYOUT_SIZE,
            });
        }
        Ok(layout)
    }

    /// Builds a layout from shape and stride tuples. Omitted strides give the
    /// contiguous row-major layout (last dimension fastest); inside a nested
    /// dimension the modes are packed first-mode-fastest.
    pub fn make(
        shapes: &[IntTuple],
        strides: Option<&[IntTuple]>,
        element_bytes: u32,
    ) -> Result<Self, LayoutError> {
        let shape_lists = shapes
            .iter()
            .map(|s| flatten_ints(s, "shape"))
            .collect::<Result<Vec<_>, _>>()?;
        for list in &shape_lists {
            if let Some(&bad) = list.iter().find(|&&s| s < 1) {
                return Err(LayoutError::NonPositiveShape(bad));
            }
        }
        let dims = match strides {
            Some(strides) => {
                if strides.len() != shapes.len() {
                    return Err(LayoutError::ArityMismatch(format!(
                        "{} shape entries vs {} stride entries",
                        shapes.len(),
                        strides.len()
                    )));
                }
                shapes
                    .iter()
                    .zip(strides)
                    .zip(&shape_lists)
                    .map(|((s, t), list)| match (s, t) {
                        (IntTuple::Int(s), IntTuple::Int(t)) => LayoutDim::flat(*s, *t),
                        (IntTuple::Tuple(_), IntTuple::Tuple(_)) => {
                            LayoutDim::nested(list, &flatten_ints(t, "stride")?)
                        }
                        _ => Err(LayoutError::ArityMismatch(format!(
                            "shape {s} is not congruent with stride {t}"
                        ))),
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => {
                let extents: Vec<i64> = shape_lists.iter().map(|l| l.iter().product()).collect();
                let mut dims = Vec::with_capacity(shapes.len());
                let mut outer = 1i64;
                let mut dim_strides = vec![0; shapes.len()];
                for i in (0..shapes.len()).rev() {
                    dim_strides[i] = outer;
                    outer = outer.saturating_mul(extents[i]);
                }
                for ((s, list), base) in shapes.iter().zip(&shape_lists).zip(dim_strides) {
                    match s {
                        IntTuple::Int(v) => dims.push(LayoutDim::flat(*v, base)?),
                        IntTuple::Tuple(_) => {
                            let mut st = Vec::with_capacity(list.len());
                            let mut acc = base;
                            for &m in list {
                                st.push(acc);
                                acc *= m;
                            }
                            dims.push(LayoutDim::nested(list, &st)?);
                        }
                    }
                }
                dims
            }
        };
        Self::from_dims(dims, element_bytes)
    }

    /// Contiguous row-major layout over flat shapes.
    pub fn row_major(shape: &[i64], element_bytes: u32) -> Result<Self, LayoutError> {
        let shapes: Vec<IntTuple> = shape.iter().map(|&s| IntTuple::Int(s)).collect();
        Self::make(&shapes, None, element_bytes)
    }

    /// One-dimensional identity layout `n:1`.
    pub fn identity(n: i64, element_bytes: u32) -> Result<Self, LayoutError> {
        Self::from_dims(vec![LayoutDim::flat(n, 1)?], element_bytes)
    }

    /// The layout formed by dimensions `from..`; an empty suffix is the
    /// single-element rank-0 layout.
    pub fn suffix(&self, from: usize) -> Layout {
        Layout {
            dims: self.dims[from.min(self.dims.len())..].to_vec(),
            element_bytes: self.element_bytes,
        }
    }

    pub fn dims(&self) -> &[LayoutDim] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn element_bytes(&self) -> u32 {
        self.element_bytes
    }

    pub fn with_element_bytes(&self, element_bytes: u32) -> Self {
        Self {
            dims: self.dims.clone(),
            element_bytes,
        }
    }

    /// Per-dimension coordinate extents.
    pub fn extents(&self) -> Vec<i64> {
        self.dims.iter().map(LayoutDim::extent).collect()
    }

    pub fn shape_tuple(&self) -> Vec<IntTuple> {
        self.dims.iter().map(LayoutDim::shape_tuple).collect()
    }

    pub fn stride_tuple(&self) -> Vec<IntTuple> {
        self.dims.iter().map(LayoutDim::stride_tuple).collect()
    }

    fn size_checked(&self) -> u64 {
        self.dims
            .iter()
            .flat_map(|d| d.modes.iter())
            .fold(1u64, |acc, m| acc.saturating_mul(m.shape as u64))
    }

    /// Number of logical elements.
    pub fn size(&self) -> u64 {
        self.size_checked()
    }

    pub fn min_offset(&self) -> i64 {
        self.modes()
            .map(|m| (m.shape - 1) * m.stride.min(0))
            .sum()
    }

    pub fn max_offset(&self) -> i64 {
        self.modes()
            .map(|m| (m.shape - 1) * m.stride.max(0))
            .sum()
    }

    /// One past the largest offset reached over the coordinate domain.
    pub fn cosize(&self) -> Result<i64, LayoutError> {
        let min = self.min_offset();
        if min < 0 {
            return Err(LayoutError::NegativeOffset(min));
        }
        Ok(self.max_offset() + 1)
    }

    /// All modes of all dimensions, first dimension first.
    pub fn modes(&self) -> impl Iterator<Item = &Mode> {
        self.dims.iter().flat_map(|d| d.modes.iter())
    }

    pub fn check_coord(&self, coord: &[i64]) -> Result<(), LayoutError> {
        if coord.len() != self.dims.len() {
            return Err(LayoutError::CoordArity {
                expected: self.dims.len(),
                got: coord.len(),
            });
        }
        for (i, (&c, d)) in coord.iter().zip(&self.dims).enumerate() {
            let extent = d.extent();
            if c < 0 || c >= extent {
                return Err(LayoutError::OutOfDomain {
                    component: i,
                    value: c,
                    extent,
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, coord: &[i64]) -> Result<i64, LayoutError> {
        self.check_coord(coord)?;
        Ok(self.eval_unchecked(coord))
    }

    /// Evaluates without the domain check. Callers must have validated `coord`.
    #[inline]
    pub fn eval_unchecked(&self, coord: &[i64]) -> i64 {
        coord
            .iter()
            .zip(&self.dims)
            .map(|(&c, d)| d.eval(c))
            .sum()
    }

    /// Maps a linear index onto the coordinate domain, first dimension fastest.
    pub fn delinearize(&self, mut index: i64) -> Vec<i64> {
        let mut coord = Vec::with_capacity(self.dims.len());
        for d in &self.dims {
            let e = d.extent();
            coord.push(index % e);
            index /= e;
        }
        coord
    }

    /// Maps a linear index onto the coordinate domain, last dimension fastest.
    pub fn delinearize_row_major(&self, mut index: i64) -> Vec<i64> {
        let mut coord = vec![0; self.dims.len()];
        for (i, d) in self.dims.iter().enumerate().rev() {
            let e = d.extent();
            coord[i] = index % e;
            index /= e;
        }
        coord
    }

    /// Visits every coordinate in row-major order.
    pub fn for_each_coord(&self, mut f: impl FnMut(&[i64])) {
        let extents = self.extents();
        let mut coord = vec![0i64; extents.len()];
        let total = self.size();
        for _ in 0..total {
            f(&coord);
            for i in (0..coord.len()).rev() {
                coord[i] += 1;
                if coord[i] < extents[i] {
                    break;
                }
                coord[i] = 0;
            }
        }
    }

    /// Whether the layout is a bijection from its domain onto `[0, size)`.
    pub fn is_dense(&self) -> bool {
        let mut modes: Vec<Mode> = self.modes().copied().filter(|m| m.shape > 1).collect();
        modes.sort_by_key(|m| (m.stride, m.shape));
        let mut expected = 1i64;
        for m in modes {
            if m.stride != expected {
                return false;
            }
            expected *= m.shape;
        }
        true
    }

    /// Byte span covered by the layout when dense.
    pub fn byte_span(&self) -> u64 {
        self.size() * self.element_bytes as u64
    }

    /// Composition: `result(c) = self(self.delinearize(inner(c)))`.
    pub fn compose(&self, inner: &Layout) -> Result<Layout, LayoutError> {
        let outer_size = self.size();
        let inner_cos = inner.cosize()?;
        if inner_cos as u64 > outer_size {
            return Err(LayoutError::DomainOverflow {
                needed: inner_cos,
                available: outer_size,
            });
        }
        let outer_modes: Vec<Mode> = self.modes().copied().collect();
        let mut dims = Vec::with_capacity(inner.rank());
        for d in &inner.dims {
            let mut modes = Vec::new();
            for m in &d.modes {
                modes.extend(compose_mode(&outer_modes, m.shape, m.stride)?);
            }
            let dim = if modes.len() == 1 && !d.nested {
                LayoutDim::flat(modes[0].shape, modes[0].stride)?
            } else {
                let shapes: Vec<i64> = modes.iter().map(|m| m.shape).collect();
                let strides: Vec<i64> = modes.iter().map(|m| m.stride).collect();
                LayoutDim::nested(&shapes, &strides)?
            };
            dims.push(dim);
        }
        let result = Layout::from_dims(dims, self.element_bytes)?;
        // Splitting a mode across several outer modes is only valid when no
        // carries cross mode boundaries; confirm pointwise.
        let mut ok = true;
        let mut idx = 0i64;
        inner.for_each_coord(|c| {
            if ok {
                let want = self.eval_unchecked(&self.delinearize(inner.eval_unchecked(c)));
                let rc = result.delinearize_row_major(idx);
                if result.eval_unchecked(&rc) != want {
                    ok = false;
                }
            }
            idx += 1;
        });
        if !ok {
            return Err(LayoutError::NotRepresentable(format!(
                "{self} composed with {inner}"
            )));
        }
        Ok(result)
    }
}

/// Composes the first-mode-fastest outer layout with the 1-D layout `n:r`.
fn compose_mode(outer: &[Mode], n: i64, r: i64) -> Result<Vec<Mode>, LayoutError> {
    if n == 1 {
        return Ok(vec![Mode {
            shape: 1,
            stride: 0,
        }]);
    }
    if r == 0 {
        return Ok(vec![Mode {
            shape: n,
            stride: 0,
        }]);
    }
    if r < 0 {
        return Err(LayoutError::NotRepresentable(
            "negative inner stride".to_string(),
        ));
    }
    let mut rest_stride = r;
    let mut rest_shape = n;
    let mut out = Vec::new();
    let last = outer.len() - 1;
    for (i, m) in outer.iter().enumerate() {
        if i == last {
            out.push(Mode {
                shape: rest_shape,
                stride: m.stride * rest_stride,
            });
            rest_shape = 1;
            break;
        }
        if rest_stride % m.shape == 0 {
            rest_stride /= m.shape;
            continue;
        }
        if m.shape % rest_stride != 0 {
            return Err(LayoutError::NotRepresentable(format!(
                "stride {rest_stride} does not divide shape {}",
                m.shape
            )));
        }
        let avail = m.shape / rest_stride;
        let stride = m.stride * rest_stride;
        rest_stride = 1;
        if rest_shape <= avail {
            if avail % rest_shape != 0 {
                return Err(LayoutError::NotRepresentable(format!(
                    "shape {rest_shape} does not divide {avail}"
                )));
            }
            out.push(Mode {
                shape: rest_shape,
                stride,
            });
            rest_shape = 1;
            break;
        }
        if rest_shape % avail != 0 {
            return Err(LayoutError::NotRepresentable(format!(
                "shape {avail} does not divide {rest_shape}"
            )));
        }
        out.push(Mode {
            shape: avail,
            stride,
        });
        rest_shape /= avail;
    }
    debug_assert_eq!(rest_shape, 1);
    Ok(out)
}

/// Two layouts may alias the same bytes when they cover identical byte spans
/// and both are dense over them.
pub fn view_compatible(src: &Layout, dst: &Layout) -> bool {
    src.byte_span() == dst.byte_span() && src.is_dense() && dst.is_dense()
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = IntTuple::Tuple(self.shape_tuple());
        let t = IntTuple::Tuple(self.stride_tuple());
        write!(f, "{s}:{t}")
    }
}
