//! Bundle representations and the feature maps that turn them into prices.
//!
//! A feature map plays the role of the representation matrix: it sends an
//! (agent, bundle) pair to a 0/1 row of dimension `d`, and a price parameter
//! `w` prices that bundle at `row · w`. Rows are produced on demand; the full
//! matrix is never built.
//!
//! Features are ordered graded-lexicographically: first by subset size, then
//! lexicographically by the sorted item list (`a, b, c, ab, ac, bc, abc`).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest item count a [`FeatureMap`] accepts. Lookup tables are sized `2^m`.
pub const MAX_ITEMS: usize = 20;

const NO_INDEX: u32 = u32::MAX;

/// A subset of the items, stored as a bitmask (bit `j` set means item `j`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", try_from = "Vec<usize>")]
pub struct Bundle(u32);

impl Bundle {
    pub const EMPTY: Bundle = Bundle(0);

    pub fn from_mask(mask: u32) -> Self {
        Bundle(mask)
    }

    /// Builds a bundle from item indices. Duplicates are ignored.
    pub fn from_items<I: IntoIterator<Item = usize>>(items: I) -> Result<Self> {
        let mut mask = 0u32;
        for j in items {
            if j >= 32 {
                return invalid(format!("item index {j} does not fit in a bundle mask"));
            }
            mask |= 1 << j;
        }
        Ok(Bundle(mask))
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, item: usize) -> bool {
        item < 32 && self.0 & (1 << item) != 0
    }

    pub fn is_subset_of(self, other: Bundle) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersects(self, other: Bundle) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(self, other: Bundle) -> Bundle {
        Bundle(self.0 | other.0)
    }

    /// True when no bit at position `>= items` is set.
    pub fn fits(self, items: usize) -> bool {
        items >= 32 || self.0 >> items == 0
    }

    pub fn items(self) -> impl Iterator<Item = usize> {
        let mask = self.0;
        (0..32).filter(move |j| mask & (1 << j) != 0)
    }

    /// Graded-lexicographic comparison: size first, then sorted item lists.
    pub fn graded_lex_cmp(&self, other: &Bundle) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.items().cmp(other.items()))
    }

    /// All non-empty subsets of `self`, in no particular order.
    pub fn nonempty_subsets(self) -> impl Iterator<Item = Bundle> {
        let full = self.0;
        let mut sub = full;
        let mut done = full == 0;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            let out = sub;
            sub = (sub.wrapping_sub(1)) & full;
            if sub == 0 {
                done = true;
            }
            Some(Bundle(out))
        })
    }
}

impl fmt::Debug for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, j) in self.items().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}")
    }
}

impl From<Bundle> for Vec<usize> {
    fn from(b: Bundle) -> Self {
        b.items().collect()
    }
}

impl TryFrom<Vec<usize>> for Bundle {
    type Error = Error;

    fn try_from(items: Vec<usize>) -> Result<Self> {
        Bundle::from_items(items)
    }
}

/// All subsets of `m` items with `1 <= size <= max_size`, graded-lex ordered.
pub fn graded_subsets(m: usize, max_size: usize) -> Vec<Bundle> {
    let mut out = Vec::new();
    for k in 1..=max_size.min(m) {
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            out.push(Bundle::from_items(combo.iter().copied()).expect("m <= MAX_ITEMS"));
            // advance to the next k-combination in lexicographic order
            let mut i = k;
            while i > 0 && combo[i - 1] == m - k + (i - 1) {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..k {
                combo[j] = combo[j - 1] + 1;
            }
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// The anonymous part of a pricing scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseScheme {
    /// One feature per item.
    Linear,
    /// One feature per item subset of size `1..=degree`.
    Polynomial { degree: usize },
    /// One feature per bundle in `X`.
    BundleIdentity,
}

impl BaseScheme {
    /// Polynomial degree, with linear pricing reported as degree 1.
    pub fn degree(&self) -> Option<usize> {
        match self {
            BaseScheme::Linear => Some(1),
            BaseScheme::Polynomial { degree } => Some(*degree),
            BaseScheme::BundleIdentity => None,
        }
    }
}

/// Sparse 0/1 feature row: the sorted indices of the features equal to 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureRow {
    pub indices: Vec<usize>,
    pub dim: usize,
}

impl FeatureRow {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &i in &self.indices {
            v[i] = 1.0;
        }
        v
    }

    pub fn norm(&self) -> f64 {
        (self.indices.len() as f64).sqrt()
    }
}

/// A pricing scheme over `m` items and `n` agents together with the bundle
/// set `X` that agents may bid on.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    base: BaseScheme,
    personalized: bool,
    items: usize,
    agents: usize,
    /// `X`, graded-lex ordered, never containing the empty bundle.
    bundles: Vec<Bundle>,
    /// mask -> inner feature index (or NO_INDEX)
    feature_index: Vec<u32>,
    /// mask -> position in `bundles` (or NO_INDEX)
    bundle_index: Vec<u32>,
    inner_dim: usize,
}

impl FeatureMap {
    /// Feature map over all `2^m - 1` non-empty bundles.
    pub fn new(base: BaseScheme, personalized: bool, items: usize, agents: usize) -> Result<Self> {
        Self::check_sizes(items, agents)?;
        let bundles = graded_subsets(items, items);
        Self::build(base, personalized, items, agents, bundles)
    }

    /// Feature map whose bundle set is restricted to `bundles`.
    pub fn with_bundles(
        base: BaseScheme,
        personalized: bool,
        items: usize,
        agents: usize,
        mut bundles: Vec<Bundle>,
    ) -> Result<Self> {
        Self::check_sizes(items, agents)?;
        for b in &bundles {
            if b.is_empty() {
                return invalid("the bundle set may not list the empty bundle");
            }
            if !b.fits(items) {
                return invalid(format!("bundle {b:?} references items beyond m = {items}"));
            }
        }
        bundles.sort_by(Bundle::graded_lex_cmp);
        bundles.dedup();
        if bundles.is_empty() {
            return invalid("the bundle set is empty");
        }
        Self::build(base, personalized, items, agents, bundles)
    }

    pub fn linear(items: usize, agents: usize) -> Result<Self> {
        Self::new(BaseScheme::Linear, false, items, agents)
    }

    pub fn polynomial(degree: usize, items: usize, agents: usize) -> Result<Self> {
        Self::new(BaseScheme::Polynomial { degree }, false, items, agents)
    }

    pub fn bundle_identity(items: usize, agents: usize) -> Result<Self> {
        Self::new(BaseScheme::BundleIdentity, false, items, agents)
    }

    /// Same scheme with `n` separate copies of the feature space.
    pub fn personalize(&self) -> Self {
        let mut fm = self.clone();
        fm.personalized = true;
        fm
    }

    fn check_sizes(items: usize, agents: usize) -> Result<()> {
        if items == 0 || items > MAX_ITEMS {
            return Err(Error::InvalidConfig(format!(
                "item count must be in 1..={MAX_ITEMS}, got {items}"
            )));
        }
        if agents == 0 {
            return Err(Error::InvalidConfig("agent count must be at least 1".into()));
        }
        Ok(())
    }

    fn build(
        base: BaseScheme,
        personalized: bool,
        items: usize,
        agents: usize,
        bundles: Vec<Bundle>,
    ) -> Result<Self> {
        let features = match base {
            BaseScheme::Linear => graded_subsets(items, 1),
            BaseScheme::Polynomial { degree } => {
                if degree < 1 || degree > items {
                    return Err(Error::InvalidConfig(format!(
                        "polynomial degree must be in 1..={items}, got {degree}"
                    )));
                }
                graded_subsets(items, degree)
            }
            BaseScheme::BundleIdentity => bundles.clone(),
        };
        let table = 1usize << items;
        let mut feature_index = vec![NO_INDEX; table];
        for (k, f) in features.iter().enumerate() {
            feature_index[f.mask() as usize] = k as u32;
        }
        let mut bundle_index = vec![NO_INDEX; table];
        for (k, b) in bundles.iter().enumerate() {
            bundle_index[b.mask() as usize] = k as u32;
        }
        Ok(FeatureMap {
            base,
            personalized,
            items,
            agents,
            bundles,
            feature_index,
            bundle_index,
            inner_dim: features.len(),
        })
    }

    pub fn base(&self) -> BaseScheme {
        self.base
    }

    pub fn is_personalized(&self) -> bool {
        self.personalized
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    /// The bundle set `X` (non-empty bundles only).
    pub fn bundles(&self) -> &[Bundle] {
        &self.bundles
    }

    /// `|X|`
    pub fn bundle_count(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_all_bundles(&self) -> bool {
        self.bundles.len() == (1usize << self.items) - 1
    }

    /// Position of `x` in `X`, if present.
    pub fn bundle_position(&self, x: Bundle) -> Option<usize> {
        if !x.fits(self.items) {
            return None;
        }
        match self.bundle_index[x.mask() as usize] {
            NO_INDEX => None,
            k => Some(k as usize),
        }
    }

    /// True for the empty bundle and every member of `X`.
    pub fn admits(&self, x: Bundle) -> bool {
        x.is_empty() || self.bundle_position(x).is_some()
    }

    /// Dimension of the anonymous feature space.
    pub fn inner_dim(&self) -> usize {
        self.inner_dim
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        if self.personalized {
            self.agents * self.inner_dim
        } else {
            self.inner_dim
        }
    }

    /// Feature subset labels of the anonymous space (polynomial schemes) or
    /// the priced bundles (bundle identity).
    pub fn feature_labels(&self) -> Vec<Bundle> {
        match self.base {
            BaseScheme::BundleIdentity => self.bundles.clone(),
            BaseScheme::Linear => graded_subsets(self.items, 1),
            BaseScheme::Polynomial { degree } => graded_subsets(self.items, degree),
        }
    }

    /// True when the representation matrix has full row rank, i.e. every
    /// (agent, bundle) price can be set independently.
    pub fn has_full_row_rank(&self) -> bool {
        let separate_agents = self.personalized || self.agents == 1;
        let rows_independent = match self.base.degree() {
            None => true,
            Some(r) => self.bundles.iter().all(|b| b.len() <= r),
        };
        separate_agents && rows_independent
    }

    fn check_args(&self, agent: usize, x: Bundle) -> Result<()> {
        if agent >= self.agents {
            return invalid(format!("agent {agent} out of range for n = {}", self.agents));
        }
        if !x.fits(self.items) {
            return invalid(format!("bundle {x:?} does not fit m = {} items", self.items));
        }
        Ok(())
    }

    /// Calls `f` once per feature equal to 1 in the row of `(agent, x)`.
    pub fn for_each_feature(
        &self,
        agent: usize,
        x: Bundle,
        mut f: impl FnMut(usize),
    ) -> Result<()> {
        self.check_args(agent, x)?;
        if x.is_empty() {
            return Ok(());
        }
        let offset = if self.personalized { agent * self.inner_dim } else { 0 };
        match self.base {
            BaseScheme::BundleIdentity => match self.feature_index[x.mask() as usize] {
                NO_INDEX => invalid(format!("bundle {x:?} is not in the bundle set")),
                k => {
                    f(offset + k as usize);
                    Ok(())
                }
            },
            BaseScheme::Linear | BaseScheme::Polynomial { .. } => {
                for s in x.nonempty_subsets() {
                    let k = self.feature_index[s.mask() as usize];
                    if k != NO_INDEX {
                        f(offset + k as usize);
                    }
                }
                Ok(())
            }
        }
    }

    /// Row `G_i(x)` as a sparse 0/1 vector.
    pub fn encode(&self, agent: usize, x: Bundle) -> Result<FeatureRow> {
        let mut indices = Vec::new();
        self.for_each_feature(agent, x, |k| indices.push(k))?;
        indices.sort_unstable();
        Ok(FeatureRow { indices, dim: self.dim() })
    }

    /// `G_i(x) · coeffs` in the arithmetic of `T` (used with `i64` for exact
    /// integer checks and `f64` for prices).
    pub fn price_with<T>(&self, coeffs: &[T], agent: usize, x: Bundle) -> Result<T>
    where
        T: Copy + Default + Add<Output = T>,
    {
        if coeffs.len() != self.dim() {
            return invalid(format!(
                "price parameter has dimension {}, feature map expects {}",
                coeffs.len(),
                self.dim()
            ));
        }
        let mut acc = T::default();
        self.for_each_feature(agent, x, |k| acc = acc + coeffs[k])?;
        Ok(acc)
    }

    /// Price of bundle `x` to `agent` under parameter `w`. Always 0 for `∅`.
    pub fn price_of(&self, w: &[f64], agent: usize, x: Bundle) -> Result<f64> {
        self.price_with(w, agent, x)
    }

    /// Adds `scale * G_i(x)` into `out`.
    pub fn accumulate(&self, out: &mut [f64], agent: usize, x: Bundle, scale: f64) -> Result<()> {
        if out.len() != self.dim() {
            return invalid("accumulator dimension mismatch");
        }
        self.for_each_feature(agent, x, |k| out[k] += scale)
    }

    /// Recovers polynomial coefficients from explicit prices on every bundle
    /// of size at most `r`, via `w(x) = Σ_{x'⊆x} (-1)^{|x∖x'|} p(x')`.
    ///
    /// Only defined for anonymous linear/polynomial maps. `p(∅)` may be
    /// omitted; if present it must be zero.
    pub fn mobius_invert<T>(&self, prices: &BTreeMap<Bundle, T>) -> Result<Vec<T>>
    where
        T: Copy + Default + PartialEq + Add<Output = T> + Sub<Output = T>,
    {
        let degree = match (self.base.degree(), self.personalized) {
            (Some(r), false) => r,
            _ => return invalid("Möbius inversion needs an anonymous polynomial feature map"),
        };
        if let Some(p0) = prices.get(&Bundle::EMPTY) {
            if *p0 != T::default() {
                return invalid("the empty bundle must be priced at 0");
            }
        }
        let labels = graded_subsets(self.items, degree);
        for x in &labels {
            if !prices.contains_key(x) {
                return invalid(format!("missing price for bundle {x:?}"));
            }
        }
        let w = labels
            .iter()
            .map(|&x| {
                let mut pos = T::default();
                let mut neg = T::default();
                for sub in x.nonempty_subsets() {
                    let p = prices[&sub];
                    if (x.len() - sub.len()) % 2 == 0 {
                        pos = pos + p;
                    } else {
                        neg = neg + p;
                    }
                }
                pos - neg
            })
            .collect();
        Ok(w)
    }

    /// Upper bound on `‖G‖_{2,∞}`, the largest row norm.
    pub fn g_norm_2inf(&self) -> f64 {
        match self.base {
            BaseScheme::BundleIdentity => 1.0,
            BaseScheme::Linear => (self.items as f64).sqrt(),
            BaseScheme::Polynomial { degree } => (self.items as f64).powf(degree as f64 / 2.0),
        }
    }

    /// Exact dimension of the polynomial space, `Σ_{k=1..r} C(m,k)`.
    pub fn polynomial_dim(items: usize, degree: usize) -> usize {
        (1..=degree.min(items)).map(|k| binomial(items, k)).sum()
    }
}
