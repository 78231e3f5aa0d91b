//! Mixed-scale data model.
//!
//! A [`MixedSchema`] splits the observed vector into a continuous block, each
//! coordinate the image of a latent real under an increasing bijection, and a
//! discrete block, each coordinate the index of the partition cell a latent
//! real falls into. Latent vectors are always ordered continuous block first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of levels of a discrete coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Levels {
    Finite(u64),
    Unbounded,
}

impl Levels {
    pub fn finite(self) -> Option<u64> {
        match self {
            Levels::Finite(q) => Some(q),
            Levels::Unbounded => None,
        }
    }
}

/// Partition of the real line into ordered half-open cells `[t_k, t_{k+1})`
/// with `t_0 = -inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PartitionSpec {
    /// Stored cuts `t_1 < ... < t_{q-1}`; the last cell is `[t_{q-1}, +inf)`.
    Cuts(Vec<f64>),
    /// Generated cuts `t_k = origin + step * (k - 1)` for `k >= 1`.
    Arithmetic { origin: f64, step: f64 },
}

impl PartitionSpec {
    /// The count rule: level `y` occupies `[y - 1, y)`, level 0 is `(-inf, 0)`.
    pub fn counts() -> Self {
        PartitionSpec::Arithmetic {
            origin: 0.0,
            step: 1.0,
        }
    }

    /// Lower cut of cell `k` (`t_k`), `-inf` for `k = 0`.
    pub fn lower(&self, k: u64) -> f64 {
        if k == 0 {
            return f64::NEG_INFINITY;
        }
        match self {
            PartitionSpec::Cuts(cuts) => cuts
                .get((k - 1) as usize)
                .copied()
                .unwrap_or(f64::INFINITY),
            PartitionSpec::Arithmetic { origin, step } => origin + step * (k - 1) as f64,
        }
    }

    /// Upper cut of cell `k` (`t_{k+1}`), `+inf` past the last stored cut.
    pub fn upper(&self, k: u64) -> f64 {
        match self {
            PartitionSpec::Cuts(cuts) => cuts.get(k as usize).copied().unwrap_or(f64::INFINITY),
            PartitionSpec::Arithmetic { origin, step } => origin + step * k as f64,
        }
    }

    /// Index of the cell containing `x`. Cut points belong to the upper cell.
    pub fn level_of(&self, x: f64) -> u64 {
        match self {
            PartitionSpec::Cuts(cuts) => cuts.partition_point(|&t| t <= x) as u64,
            PartitionSpec::Arithmetic { origin, step } => {
                if x < *origin {
                    0
                } else {
                    let k = ((x - origin) / step).floor() as u64 + 1;
                    // guard against rounding across a cut
                    if x < self.lower(k) {
                        k - 1
                    } else if x >= self.upper(k) {
                        k + 1
                    } else {
                        k
                    }
                }
            }
        }
    }
}

/// Increasing one-to-one map from a latent real onto a continuous coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MonotoneMap {
    Identity,
    Affine { scale: f64, shift: f64 },
    /// `y = exp(y*)`, onto `(0, inf)`.
    LogExp,
}

impl MonotoneMap {
    pub fn forward(&self, latent: f64) -> f64 {
        match *self {
            MonotoneMap::Identity => latent,
            MonotoneMap::Affine { scale, shift } => scale * latent + shift,
            MonotoneMap::LogExp => latent.exp(),
        }
    }

    pub fn inverse(&self, y: f64) -> Option<f64> {
        match *self {
            MonotoneMap::Identity => Some(y),
            MonotoneMap::Affine { scale, shift } => Some((y - shift) / scale),
            MonotoneMap::LogExp => (y > 0.0).then(|| y.ln()),
        }
    }

    /// `log |d inverse / dy|` at `y`.
    pub fn ln_abs_inverse_derivative(&self, y: f64) -> Option<f64> {
        match *self {
            MonotoneMap::Identity => Some(0.0),
            MonotoneMap::Affine { scale, .. } => Some(-scale.abs().ln()),
            MonotoneMap::LogExp => (y > 0.0).then(|| -y.ln()),
        }
    }

    pub fn in_range(&self, y: f64) -> bool {
        match self {
            MonotoneMap::LogExp => y > 0.0 && y.is_finite(),
            _ => y.is_finite(),
        }
    }

    fn normalized(self) -> Self {
        match self {
            MonotoneMap::Affine { scale, shift } if scale < 0.0 => MonotoneMap::Affine {
                scale: -scale,
                shift,
            },
            m => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscreteKind {
    Binary,
    Categorical,
    Count,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousColumn {
    pub name: String,
    pub map: MonotoneMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteColumn {
    pub name: String,
    pub kind: DiscreteKind,
    pub levels: Levels,
    pub partition: PartitionSpec,
}

impl DiscreteColumn {
    pub fn binary(name: impl Into<String>, cut: f64) -> Self {
        DiscreteColumn {
            name: name.into(),
            kind: DiscreteKind::Binary,
            levels: Levels::Finite(2),
            partition: PartitionSpec::Cuts(vec![cut]),
        }
    }

    pub fn categorical(name: impl Into<String>, cuts: Vec<f64>) -> Self {
        DiscreteColumn {
            name: name.into(),
            kind: DiscreteKind::Categorical,
            levels: Levels::Finite(cuts.len() as u64 + 1),
            partition: PartitionSpec::Cuts(cuts),
        }
    }

    pub fn count(name: impl Into<String>) -> Self {
        DiscreteColumn {
            name: name.into(),
            kind: DiscreteKind::Count,
            levels: Levels::Unbounded,
            partition: PartitionSpec::counts(),
        }
    }
}

/// Position of a user-facing column inside the latent ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRef {
    Continuous(usize),
    Discrete(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSchema {
    continuous: Vec<ContinuousColumn>,
    discrete: Vec<DiscreteColumn>,
    order: Vec<ColumnRef>,
}

/// Hyper-rectangle `[lower_j, upper_j)` of discrete-block latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Cell {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        Cell { lower, upper }
    }

    /// The whole space `R^dim`.
    pub fn full(dim: usize) -> Self {
        Cell {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo && v < hi)
    }
}

/// A mixed observation in latent order: continuous block then discrete block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedPoint {
    pub y1: Vec<f64>,
    pub y2: Vec<u64>,
}

impl MixedPoint {
    pub fn new(y1: Vec<f64>, y2: Vec<u64>) -> Self {
        MixedPoint { y1, y2 }
    }

    pub fn continuous(y1: Vec<f64>) -> Self {
        MixedPoint { y1, y2: Vec::new() }
    }

    pub fn discrete(y2: Vec<u64>) -> Self {
        MixedPoint { y1: Vec::new(), y2 }
    }
}

impl MixedSchema {
    /// Builds a schema with continuous columns first in user order, then
    /// discrete columns. Fails with every invariant violation found.
    pub fn new(continuous: Vec<ContinuousColumn>, discrete: Vec<DiscreteColumn>) -> Result<Self> {
        let order = (0..continuous.len())
            .map(ColumnRef::Continuous)
            .chain((0..discrete.len()).map(ColumnRef::Discrete))
            .collect();
        Self::with_order(continuous, discrete, order)
    }

    /// Like [`MixedSchema::new`], with an explicit user column order.
    pub fn with_order(
        continuous: Vec<ContinuousColumn>,
        discrete: Vec<DiscreteColumn>,
        order: Vec<ColumnRef>,
    ) -> Result<Self> {
        let schema = Self::unchecked(continuous, discrete, order);
        let diagnostics = validate_schema(&schema);
        if !diagnostics.is_empty() {
            return Err(Error::Schema(diagnostics));
        }
        Ok(schema.normalized())
    }

    /// Builds without validation; pair with [`validate_schema`].
    pub fn unchecked(
        continuous: Vec<ContinuousColumn>,
        discrete: Vec<DiscreteColumn>,
        order: Vec<ColumnRef>,
    ) -> Self {
        MixedSchema {
            continuous,
            discrete,
            order,
        }
    }

    /// `p` identity-mapped continuous coordinates: the latent space itself.
    pub fn all_continuous(p: usize) -> Self {
        let cols = (0..p)
            .map(|j| ContinuousColumn {
                name: format!("x{}", j + 1),
                map: MonotoneMap::Identity,
            })
            .collect();
        MixedSchema::new(cols, Vec::new()).expect("identity schema is valid")
    }

    fn normalized(mut self) -> Self {
        for c in &mut self.continuous {
            c.map = c.map.normalized();
        }
        self
    }

    pub fn p1(&self) -> usize {
        self.continuous.len()
    }

    pub fn p2(&self) -> usize {
        self.discrete.len()
    }

    pub fn p(&self) -> usize {
        self.p1() + self.p2()
    }

    pub fn continuous(&self) -> &[ContinuousColumn] {
        &self.continuous
    }

    pub fn discrete(&self) -> &[DiscreteColumn] {
        &self.discrete
    }

    pub fn order(&self) -> &[ColumnRef] {
        &self.order
    }

    pub fn levels(&self) -> Vec<Levels> {
        self.discrete.iter().map(|d| d.levels).collect()
    }

    pub fn partitions(&self) -> Vec<&PartitionSpec> {
        self.discrete.iter().map(|d| &d.partition).collect()
    }

    pub fn cont_maps(&self) -> Vec<MonotoneMap> {
        self.continuous.iter().map(|c| c.map).collect()
    }

    /// Column names in user order.
    pub fn column_names(&self) -> Vec<&str> {
        self.order
            .iter()
            .map(|r| match *r {
                ColumnRef::Continuous(i) => self.continuous[i].name.as_str(),
                ColumnRef::Discrete(i) => self.discrete[i].name.as_str(),
            })
            .collect()
    }

    /// Checks dimensions and ranges of a point.
    pub fn check_point(&self, y: &MixedPoint) -> Result<()> {
        if y.y1.len() != self.p1() {
            return Err(Error::Dimension {
                expected: self.p1(),
                got: y.y1.len(),
            });
        }
        if y.y2.len() != self.p2() {
            return Err(Error::Dimension {
                expected: self.p2(),
                got: y.y2.len(),
            });
        }
        for (c, &v) in self.continuous.iter().zip(&y.y1) {
            if !c.map.in_range(v) {
                return Err(Error::domain(&c.name, format!("value {v} outside map range")));
            }
        }
        for (d, &v) in self.discrete.iter().zip(&y.y2) {
            if let Levels::Finite(q) = d.levels {
                if v >= q {
                    return Err(Error::domain(
                        &d.name,
                        format!("level out of range: {v} >= {q}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Rounds a latent vector (continuous block first) to the observed point.
    pub fn round(&self, latent: &[f64]) -> MixedPoint {
        let p1 = self.p1();
        let y1 = self
            .continuous
            .iter()
            .zip(&latent[..p1])
            .map(|(c, &v)| c.map.forward(v))
            .collect();
        let y2 = self
            .discrete
            .iter()
            .zip(&latent[p1..])
            .map(|(d, &v)| d.partition.level_of(v))
            .collect();
        MixedPoint { y1, y2 }
    }

    /// Parses the TOML schema file format (see `docs/formats.md`).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub(crate) fn from_file(file: SchemaFile) -> Result<Self> {
        let mut continuous = Vec::new();
        let mut discrete = Vec::new();
        let mut order = Vec::new();
        let mut problems = Vec::new();
        for col in file.column {
            match col.kind.as_str() {
                "continuous" => {
                    let map = match col.map.as_deref().unwrap_or("identity") {
                        "identity" => MonotoneMap::Identity,
                        "log" => MonotoneMap::LogExp,
                        "affine" => MonotoneMap::Affine {
                            scale: col.scale.unwrap_or(1.0),
                            shift: col.shift.unwrap_or(0.0),
                        },
                        other => {
                            problems.push(format!("{}: unknown map '{other}'", col.name));
                            continue;
                        }
                    };
                    order.push(ColumnRef::Continuous(continuous.len()));
                    continuous.push(ContinuousColumn {
                        name: col.name,
                        map,
                    });
                }
                "binary" => {
                    let cuts = col.cuts.unwrap_or_else(|| vec![0.0]);
                    order.push(ColumnRef::Discrete(discrete.len()));
                    discrete.push(DiscreteColumn {
                        name: col.name,
                        kind: DiscreteKind::Binary,
                        levels: Levels::Finite(2),
                        partition: PartitionSpec::Cuts(cuts),
                    });
                }
                "categorical" => {
                    let Some(q) = col.levels else {
                        problems.push(format!("{}: categorical column needs 'levels'", col.name));
                        continue;
                    };
                    let cuts = col
                        .cuts
                        .unwrap_or_else(|| (0..q.saturating_sub(1)).map(|k| k as f64).collect());
                    order.push(ColumnRef::Discrete(discrete.len()));
                    discrete.push(DiscreteColumn {
                        name: col.name,
                        kind: DiscreteKind::Categorical,
                        levels: Levels::Finite(q),
                        partition: PartitionSpec::Cuts(cuts),
                    });
                }
                "count" => {
                    let partition = PartitionSpec::Arithmetic {
                        origin: col.origin.unwrap_or(0.0),
                        step: col.step.unwrap_or(1.0),
                    };
                    order.push(ColumnRef::Discrete(discrete.len()));
                    discrete.push(DiscreteColumn {
                        name: col.name,
                        kind: DiscreteKind::Count,
                        levels: Levels::Unbounded,
                        partition,
                    });
                }
                other => problems.push(format!("{}: unknown kind '{other}'", col.name)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Schema(problems));
        }
        Self::with_order(continuous, discrete, order)
    }

    pub(crate) fn to_file(&self) -> SchemaFile {
        let column = self
            .order
            .iter()
            .map(|r| match *r {
                ColumnRef::Continuous(i) => {
                    let c = &self.continuous[i];
                    let (map, scale, shift) = match c.map {
                        MonotoneMap::Identity => ("identity", None, None),
                        MonotoneMap::LogExp => ("log", None, None),
                        MonotoneMap::Affine { scale, shift } => ("affine", Some(scale), Some(shift)),
                    };
                    ColumnEntry {
                        name: c.name.clone(),
                        kind: "continuous".into(),
                        map: Some(map.into()),
                        scale,
                        shift,
                        ..ColumnEntry::default()
                    }
                }
                ColumnRef::Discrete(i) => {
                    let d = &self.discrete[i];
                    let kind = match d.kind {
                        DiscreteKind::Binary => "binary",
                        DiscreteKind::Categorical => "categorical",
                        DiscreteKind::Count => "count",
                    };
                    let mut entry = ColumnEntry {
                        name: d.name.clone(),
                        kind: kind.into(),
                        levels: d.levels.finite().filter(|_| d.kind == DiscreteKind::Categorical),
                        ..ColumnEntry::default()
                    };
                    match &d.partition {
                        PartitionSpec::Cuts(c) => entry.cuts = Some(c.clone()),
                        PartitionSpec::Arithmetic { origin, step } => {
                            entry.origin = Some(*origin);
                            entry.step = Some(*step);
                        }
                    }
                    entry
                }
            })
            .collect();
        SchemaFile { column }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file()).expect("schema serializes")
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct SchemaFile {
    #[serde(default)]
    pub column: Vec<ColumnEntry>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub(crate) struct ColumnEntry {
    pub name: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cuts: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
}

/// Every invariant violation of `schema`; empty when the schema is valid.
pub fn validate_schema(schema: &MixedSchema) -> Vec<String> {
    let mut out = Vec::new();
    if schema.p() == 0 {
        out.push("schema has no columns".to_string());
    }
    let refs_ok = schema.order.len() == schema.p()
        && (0..schema.p1()).all(|i| schema.order.contains(&ColumnRef::Continuous(i)))
        && (0..schema.p2()).all(|i| schema.order.contains(&ColumnRef::Discrete(i)));
    if !refs_ok {
        out.push("column order does not cover every column exactly once".to_string());
    }
    for c in &schema.continuous {
        match c.map {
            MonotoneMap::Affine { scale, shift } => {
                if scale == 0.0 || !scale.is_finite() || !shift.is_finite() {
                    out.push(format!("{}: degenerate map (affine scale {scale})", c.name));
                }
            }
            MonotoneMap::Identity | MonotoneMap::LogExp => {}
        }
    }
    for d in &schema.discrete {
        match (&d.partition, d.levels) {
            (PartitionSpec::Cuts(cuts), levels) => {
                if cuts.iter().any(|t| !t.is_finite()) {
                    out.push(format!("{}: cuts must be finite", d.name));
                }
                if cuts.windows(2).any(|w| w[0] >= w[1]) {
                    out.push(format!("{}: cuts not increasing", d.name));
                }
                match levels {
                    Levels::Finite(q) => {
                        if q < 2 {
                            out.push(format!("{}: needs at least 2 levels, got {q}", d.name));
                        }
                        if cuts.len() as u64 + 1 != q {
                            out.push(format!(
                                "{}: cell count mismatch ({} cuts for {q} levels)",
                                d.name,
                                cuts.len()
                            ));
                        }
                    }
                    Levels::Unbounded => {
                        out.push(format!("{}: unbounded levels need a cut rule", d.name))
                    }
                }
            }
            (PartitionSpec::Arithmetic { origin, step }, levels) => {
                if !(step.is_finite() && *step > 0.0) || !origin.is_finite() {
                    out.push(format!("{}: cut rule needs finite origin and step > 0", d.name));
                }
                if levels != Levels::Unbounded {
                    out.push(format!("{}: cut rule only valid for count columns", d.name));
                }
            }
        }
    }
    out
}

/// The hyper-rectangle of discrete-block latents that round to `y2`.
pub fn cell_of(schema: &MixedSchema, y2: &[u64]) -> Result<Cell> {
    if y2.len() != schema.p2() {
        return Err(Error::Dimension {
            expected: schema.p2(),
            got: y2.len(),
        });
    }
    let mut lower = Vec::with_capacity(y2.len());
    let mut upper = Vec::with_capacity(y2.len());
    for (d, &k) in schema.discrete.iter().zip(y2) {
        if let Levels::Finite(q) = d.levels {
            if k >= q {
                return Err(Error::domain(
                    &d.name,
                    format!("level out of range: {k} >= {q}"),
                ));
            }
        }
        lower.push(d.partition.lower(k));
        upper.push(d.partition.upper(k));
    }
    Ok(Cell { lower, upper })
}

/// Latent continuous block and the log-Jacobian of the inverse maps at `y1`.
pub fn latent_of_continuous(schema: &MixedSchema, y1: &[f64]) -> Result<(Vec<f64>, f64)> {
    if y1.len() != schema.p1() {
        return Err(Error::Dimension {
            expected: schema.p1(),
            got: y1.len(),
        });
    }
    let mut latent = Vec::with_capacity(y1.len());
    let mut log_jacobian = 0.0;
    for (c, &y) in schema.continuous.iter().zip(y1) {
        let (Some(x), Some(lj)) = (
            c.map.inverse(y).filter(|_| c.map.in_range(y)),
            c.map.ln_abs_inverse_derivative(y),
        ) else {
            return Err(Error::domain(&c.name, format!("value {y} outside map range")));
        };
        latent.push(x);
        log_jacobian += lj;
    }
    Ok((latent, log_jacobian))
}
