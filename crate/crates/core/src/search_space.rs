//! Discrete search spaces built from affine integer grids.
//!
//! Every hyperparameter is searched in an integer x-space and decoded through
//! `y = slope * x + intercept`. One perturbation step is always one x-step; its
//! effect in y-space is `slope`.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of convolution layers in the six dense blocks of the default space.
pub const SEARCHED_CONV_LAYERS: usize = 24;
/// Layers per dense block.
pub const LAYERS_PER_BLOCK: usize = 4;
/// Dense blocks (three on the down path, three on the up path).
pub const BLOCKS: usize = 6;
/// Class count used for the fixed-width head when none is given.
pub const DEFAULT_CLASS_COUNT: u32 = 4;
/// Name of the built-in 76-dimension preset.
pub const ACDC76: &str = "acdc76";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionKind {
    NumFilters,
    FilterHeight,
    FilterWidth,
    Pooling,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingType {
    Max,
    Average,
}

impl PoolingType {
    /// Grid value encoding: 0 is max pooling, 1 is average pooling.
    pub fn from_code(y: i64) -> Option<Self> {
        match y {
            0 => Some(PoolingType::Max),
            1 => Some(PoolingType::Average),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        match self {
            PoolingType::Max => 0,
            PoolingType::Average => 1,
        }
    }
}

impl fmt::Display for PoolingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingType::Max => "max",
            PoolingType::Average => "average",
        })
    }
}

/// A decoded hyperparameter value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodedValue {
    Int(i64),
    Pooling(PoolingType),
}

impl DecodedValue {
    pub fn as_int(self) -> Option<i64> {
        match self {
            DecodedValue::Int(v) => Some(v),
            DecodedValue::Pooling(_) => None,
        }
    }

    pub fn as_pooling(self) -> Option<PoolingType> {
        match self {
            DecodedValue::Pooling(p) => Some(p),
            DecodedValue::Int(_) => None,
        }
    }
}

impl fmt::Display for DecodedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodedValue::Int(v) => write!(f, "{v}"),
            DecodedValue::Pooling(p) => write!(f, "{p}"),
        }
    }
}

/// One searchable hyperparameter on the grid `y = slope * x + intercept`, `x in [x_min, x_max]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSpec {
    pub name: String,
    pub kind: DimensionKind,
    pub slope: i64,
    pub intercept: i64,
    pub x_min: i64,
    pub x_max: i64,
}

impl DimensionSpec {
    pub fn new(
        name: impl Into<String>,
        kind: DimensionKind,
        slope: i64,
        intercept: i64,
        x_min: i64,
        x_max: i64,
    ) -> Self {
        DimensionSpec {
            name: name.into(),
            kind,
            slope,
            intercept,
            x_min,
            x_max,
        }
    }

    pub fn num_filters(name: impl Into<String>) -> Self {
        Self::new(name, DimensionKind::NumFilters, 16, 16, 1, 12)
    }

    pub fn filter_height(name: impl Into<String>) -> Self {
        Self::new(name, DimensionKind::FilterHeight, 2, 1, 0, 5)
    }

    pub fn filter_width(name: impl Into<String>) -> Self {
        Self::new(name, DimensionKind::FilterWidth, 2, 1, 0, 5)
    }

    pub fn pooling(name: impl Into<String>) -> Self {
        Self::new(name, DimensionKind::Pooling, 1, 0, 0, 1)
    }

    /// Perturbation step in x-space. Always one grid step.
    pub fn epsilon(&self) -> i64 {
        1
    }

    /// Effect of one x-step on the decoded value.
    pub fn y_step(&self) -> i64 {
        self.slope
    }

    /// Number of grid points minus one.
    pub fn range(&self) -> i64 {
        self.x_max - self.x_min
    }

    pub fn contains(&self, x: i64) -> bool {
        (self.x_min..=self.x_max).contains(&x)
    }

    pub fn clamp(&self, x: i64) -> i64 {
        x.clamp(self.x_min, self.x_max)
    }

    fn check(&self, x: i64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                name: self.name.clone(),
                x,
                x_min: self.x_min,
                x_max: self.x_max,
            })
        }
    }

    /// Raw affine value, without the pooling interpretation.
    pub fn affine(&self, x: i64) -> Result<i64> {
        self.check(x)?;
        Ok(self.slope * x + self.intercept)
    }

    pub fn decode(&self, x: i64) -> Result<DecodedValue> {
        let y = self.affine(x)?;
        match self.kind {
            DimensionKind::Pooling => PoolingType::from_code(y)
                .map(DecodedValue::Pooling)
                .ok_or_else(|| {
                    Error::InvalidSpace(format!(
                        "pooling dimension `{}` decodes x={x} to {y}, expected 0 or 1",
                        self.name
                    ))
                }),
            _ => Ok(DecodedValue::Int(y)),
        }
    }

    /// Inverse of [`DimensionSpec::affine`]; `None` when `y` is not on the grid.
    pub fn encode(&self, y: i64) -> Option<i64> {
        if self.slope == 0 {
            return (self.x_min == self.x_max && y == self.intercept).then_some(self.x_min);
        }
        let shifted = y - self.intercept;
        if shifted % self.slope != 0 {
            return None;
        }
        let x = shifted / self.slope;
        self.contains(x).then_some(x)
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidSpace("dimension with empty name".into()));
        }
        if self.x_min > self.x_max {
            return Err(Error::InvalidSpace(format!(
                "dimension `{}`: x_min {} > x_max {}",
                self.name, self.x_min, self.x_max
            )));
        }
        match self.kind {
            DimensionKind::Pooling => {
                for x in self.x_min..=self.x_max {
                    self.decode(x)?;
                }
                if self.slope == 0 && self.x_min != self.x_max {
                    return Err(Error::InvalidSpace(format!(
                        "pooling dimension `{}` has slope 0 over several grid points",
                        self.name
                    )));
                }
            }
            _ if self.slope == 0 => {
                return Err(Error::InvalidSpace(format!(
                    "dimension `{}` has slope 0",
                    self.name
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Ordered list of dimensions. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    dimensions: Vec<DimensionSpec>,
}

impl SearchSpace {
    pub fn new(dimensions: Vec<DimensionSpec>) -> Result<Self> {
        if dimensions.is_empty() {
            return Err(Error::InvalidSpace("no dimensions".into()));
        }
        let mut seen = HashSet::new();
        for dim in &dimensions {
            dim.validate()?;
            if !seen.insert(dim.name.as_str()) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate dimension name `{}`",
                    dim.name
                )));
            }
        }
        Ok(SearchSpace { dimensions })
    }

    pub fn dimensions(&self) -> &[DimensionSpec] {
        &self.dimensions
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn dimension(&self, index: usize) -> &DimensionSpec {
        &self.dimensions[index]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::Shape(format!(
                "policy has {len} coordinates, space has {} dimensions",
                self.len()
            )));
        }
        Ok(())
    }

    /// Clips every coordinate into its bounds.
    pub fn clamp_policy(&self, raw: &[i64]) -> Result<PolicyVector> {
        self.check_len(raw.len())?;
        Ok(PolicyVector {
            coords: raw
                .iter()
                .zip(&self.dimensions)
                .map(|(&x, dim)| dim.clamp(x))
                .collect(),
        })
    }

    pub fn validate(&self, policy: &PolicyVector) -> Result<()> {
        self.check_len(policy.len())?;
        for (&x, dim) in policy.coords.iter().zip(&self.dimensions) {
            dim.check(x)?;
        }
        Ok(())
    }

    /// Builds a policy from coordinates that must already be in bounds.
    pub fn policy(&self, coords: Vec<i64>) -> Result<PolicyVector> {
        let policy = PolicyVector { coords };
        self.validate(&policy)?;
        Ok(policy)
    }

    pub fn decode(&self, policy: &PolicyVector) -> Result<Vec<DecodedValue>> {
        self.check_len(policy.len())?;
        policy
            .coords
            .iter()
            .zip(&self.dimensions)
            .map(|(&x, dim)| dim.decode(x))
            .collect()
    }

    /// Uniform draw over the grid, one coordinate per dimension in order.
    pub fn random_policy<R: Rng + ?Sized>(&self, rng: &mut R) -> PolicyVector {
        PolicyVector {
            coords: self
                .dimensions
                .iter()
                .map(|dim| rng.random_range(dim.x_min..=dim.x_max))
                .collect(),
        }
    }

    pub fn min_policy(&self) -> PolicyVector {
        PolicyVector {
            coords: self.dimensions.iter().map(|d| d.x_min).collect(),
        }
    }

    pub fn max_policy(&self) -> PolicyVector {
        PolicyVector {
            coords: self.dimensions.iter().map(|d| d.x_max).collect(),
        }
    }
}

/// Grid coordinates of one policy, in x-space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyVector {
    pub coords: Vec<i64>,
}

impl PolicyVector {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.coords
    }
}

impl fmt::Display for PolicyVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, x) in self.coords.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

/// The 76-dimension space over the dense encoder-decoder.
///
/// Layout is block-major, layer-minor: `(NF, FH, FW)` for each of the 24 block
/// layers, then `(FH, FW)` for the head convolution whose filter count is fixed
/// to the class count, then the two down-path pooling choices.
pub fn default_space() -> SearchSpace {
    let mut dims = Vec::with_capacity(76);
    for block in 1..=BLOCKS {
        for layer in 1..=LAYERS_PER_BLOCK {
            dims.push(DimensionSpec::num_filters(format!("b{block}_l{layer}_nf")));
            dims.push(DimensionSpec::filter_height(format!(
                "b{block}_l{layer}_fh"
            )));
            dims.push(DimensionSpec::filter_width(format!("b{block}_l{layer}_fw")));
        }
    }
    dims.push(DimensionSpec::filter_height("head_fh"));
    dims.push(DimensionSpec::filter_width("head_fw"));
    dims.push(DimensionSpec::pooling("pool1"));
    dims.push(DimensionSpec::pooling("pool2"));
    SearchSpace::new(dims).expect("preset space is valid")
}

/// Looks up a named preset.
pub fn preset(name: &str) -> Option<SearchSpace> {
    match name {
        ACDC76 => Some(default_space()),
        _ => None,
    }
}

/// Free-function form of [`DimensionSpec::decode`].
pub fn decode_dimension(spec: &DimensionSpec, x: i64) -> Result<DecodedValue> {
    spec.decode(x)
}

/// Free-function form of [`SearchSpace::clamp_policy`].
pub fn clamp_policy(space: &SearchSpace, raw: &[i64]) -> Result<PolicyVector> {
    space.clamp_policy(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nf() -> DimensionSpec {
        DimensionSpec::num_filters("nf")
    }

    #[test]
    fn preset_has_76_dimensions() {
        let space = default_space();
        assert_eq!(space.len(), 76);
        let kinds: Vec<_> = space.dimensions().iter().map(|d| d.kind).collect();
        assert_eq!(
            kinds
                .iter()
                .filter(|k| **k == DimensionKind::NumFilters)
                .count(),
            24
        );
        assert_eq!(
            kinds
                .iter()
                .filter(|k| **k == DimensionKind::Pooling)
                .count(),
            2
        );
    }

    #[test]
    fn grid_functions() {
        assert_eq!(nf().decode(1).unwrap(), DecodedValue::Int(32));
        assert_eq!(nf().decode(12).unwrap(), DecodedValue::Int(208));
        let fh = DimensionSpec::filter_height("fh");
        assert_eq!(fh.decode(0).unwrap(), DecodedValue::Int(1));
        let fw = DimensionSpec::filter_width("fw");
        assert_eq!(fw.decode(5).unwrap(), DecodedValue::Int(11));
        let pool = DimensionSpec::pooling("p");
        assert_eq!(
            pool.decode(0).unwrap(),
            DecodedValue::Pooling(PoolingType::Max)
        );
        assert_eq!(
            pool.decode(1).unwrap(),
            DecodedValue::Pooling(PoolingType::Average)
        );
        assert_eq!(nf().epsilon(), 1);
        assert_eq!(nf().y_step(), 16);
    }

    #[test]
    fn decode_out_of_range_names_dimension() {
        let err = nf().decode(13).unwrap_err();
        assert!(matches!(err, Error::Domain { ref name, x: 13, .. } if name == "nf"));
        assert!(err.to_string().contains("nf"));
    }

    #[test]
    fn clamp_examples() {
        let space = SearchSpace::new(vec![nf(), DimensionSpec::filter_height("fh")]).unwrap();
        assert_eq!(space.clamp_policy(&[13, -1]).unwrap().coords, vec![12, 0]);
        assert_eq!(space.clamp_policy(&[4, 2]).unwrap().coords, vec![4, 2]);
        assert!(matches!(space.clamp_policy(&[1]), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(SearchSpace::new(vec![nf(), nf()]).is_err());
        assert!(SearchSpace::new(vec![DimensionSpec::new(
            "z",
            DimensionKind::Custom,
            0,
            1,
            0,
            3
        )])
        .is_err());
        assert!(SearchSpace::new(vec![DimensionSpec::new(
            "r",
            DimensionKind::Custom,
            1,
            0,
            3,
            2
        )])
        .is_err());
        assert!(SearchSpace::new(vec![DimensionSpec::new(
            "p",
            DimensionKind::Pooling,
            1,
            0,
            0,
            2
        )])
        .is_err());
        assert!(SearchSpace::new(vec![]).is_err());
    }

    #[test]
    fn encode_inverts_affine() {
        let d = nf();
        for x in d.x_min..=d.x_max {
            assert_eq!(d.encode(d.affine(x).unwrap()), Some(x));
        }
        assert_eq!(d.encode(33), None);
        assert_eq!(d.encode(224), None);
    }

    fn arb_dim() -> impl Strategy<Value = DimensionSpec> {
        (-20i64..20, -50i64..50, -10i64..10, 0i64..15).prop_filter_map(
            "nonzero slope",
            |(slope, intercept, lo, width)| {
                (slope != 0).then(|| {
                    DimensionSpec::new("d", DimensionKind::Custom, slope, intercept, lo, lo + width)
                })
            },
        )
    }

    proptest! {
        #[test]
        fn decode_is_strictly_monotone(dim in arb_dim()) {
            let ys: Vec<i64> = (dim.x_min..=dim.x_max).map(|x| dim.affine(x).unwrap()).collect();
            let increasing = ys.windows(2).all(|w| w[0] < w[1]);
            let decreasing = ys.windows(2).all(|w| w[0] > w[1]);
            prop_assert!(increasing || decreasing);
        }

        #[test]
        fn clamp_is_idempotent(raw in proptest::collection::vec(-30i64..30, 76)) {
            let space = default_space();
            let once = space.clamp_policy(&raw).unwrap();
            let twice = space.clamp_policy(&once.coords).unwrap();
            prop_assert!(space.validate(&once).is_ok());
            prop_assert_eq!(once, twice);
        }
    }
}
