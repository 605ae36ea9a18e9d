//! Cost-matrix construction from binarized outputs, optimal (Hungarian) and
//! greedy injective class-to-center assignment, multi-head reassignment, and
//! the full-space approximation.
//!
//! Cost entries are kept as exact rationals built from integer Hamming
//! counts and label counts; they are scaled by a common denominator to
//! integers only at the solver boundary.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::{concat_heads, hamming_distance, head_slice, BinaryCode, Codebook, HeadLayout};
use crate::data::LabelMask;
use crate::{Error, Result};

/// Assignment solver choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Greedy,
    Hungarian,
}

/// When the greedy solver draws its random class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreedyOrderMode {
    /// A fresh order per head (default).
    PerHead,
    /// One order per reassignment event, shared by all heads.
    PerEvent,
}

/// A `C x M'` grid of exact nonnegative rational costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Vec<BigRational>,
    rows: usize,
    cols: usize,
}

impl CostMatrix {
    pub fn from_entries(entries: Vec<BigRational>, rows: usize, cols: usize) -> Result<Self> {
        if entries.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "cost matrix needs rows*cols entries, got {} for {rows}x{cols}",
                entries.len()
            )));
        }
        if entries.iter().any(|e| e.is_negative()) {
            return Err(Error::InvalidParameter("negative cost entry".into()));
        }
        Ok(Self {
            entries,
            rows,
            cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> &BigRational {
        &self.entries[row * self.cols + col]
    }

    pub fn get_f64(&self, row: usize, col: usize) -> f64 {
        self.get(row, col).to_f64().unwrap_or(f64::NAN)
    }
}

/// Per-class accumulation of weighted Hamming sums, bucketed by label count
/// so the hot loop stays in integer arithmetic.
#[derive(Debug, Clone, Default)]
struct ClassBuckets {
    /// label count -> (samples with that count, per-column Hamming sums)
    by_label_count: BTreeMap<usize, (u64, Vec<u64>)>,
}

impl ClassBuckets {
    fn add(&mut self, label_count: usize, dists: &[u32], cols: usize) {
        let (count, sums) = self
            .by_label_count
            .entry(label_count)
            .or_insert_with(|| (0, vec![0u64; cols]));
        *count += 1;
        for (s, &d) in sums.iter_mut().zip(dists) {
            *s += d as u64;
        }
    }

    /// Total weight and per-column weighted squared-Euclidean sums, exactly.
    fn finalize(&self, cols: usize) -> Option<(BigRational, Vec<BigRational>)> {
        if self.by_label_count.is_empty() {
            return None;
        }
        let mut weight = BigRational::zero();
        let mut sums = vec![BigRational::zero(); cols];
        for (&label_count, (count, hamsums)) in &self.by_label_count {
            let denom = BigInt::from(label_count);
            weight += BigRational::new(BigInt::from(*count), denom.clone());
            for (acc, &h) in sums.iter_mut().zip(hamsums) {
                // squared Euclidean over {-1,+1} codes is 4 * Hamming
                *acc += BigRational::new(BigInt::from(4 * h), denom.clone());
            }
        }
        Some((weight, sums))
    }
}

/// Accumulates weighted distances between sample codes and a fixed column
/// set, one bucket set per class; yields the exact cost matrix.
#[derive(Debug, Clone)]
pub struct CostAccumulator {
    columns: Vec<BinaryCode>,
    classes: Vec<ClassBuckets>,
}

impl CostAccumulator {
    pub fn new(columns: Vec<BinaryCode>, class_count: usize) -> Result<Self> {
        if columns.is_empty() || class_count == 0 {
            return Err(Error::InvalidParameter(
                "cost accumulator needs at least one column and one class".into(),
            ));
        }
        Ok(Self {
            columns,
            classes: vec![ClassBuckets::default(); class_count],
        })
    }

    pub fn add_sample(&mut self, code: &BinaryCode, labels: &LabelMask) -> Result<()> {
        let dists: Vec<u32> = self
            .columns
            .iter()
            .map(|col| hamming_distance(code, col))
            .collect::<Result<_>>()?;
        let label_count = labels.count();
        if label_count == 0 {
            return Err(Error::InvalidParameter("sample has no labels".into()));
        }
        for c in labels.iter() {
            self.classes[c].add(label_count, &dists, self.columns.len());
        }
        Ok(())
    }

    /// Builds the exact cost matrix; errors if some class never accumulated
    /// a sample.
    pub fn finalize(&self) -> Result<CostMatrix> {
        let cols = self.columns.len();
        let rows: Vec<Vec<BigRational>> = self
            .classes
            .par_iter()
            .enumerate()
            .map(|(class, buckets)| {
                let (weight, sums) = buckets.finalize(cols).ok_or(Error::EmptyClass { class })?;
                Ok(sums.into_iter().map(|s| s / weight.clone()).collect())
            })
            .collect::<Result<_>>()?;
        let entries = rows.into_iter().flatten().collect();
        CostMatrix::from_entries(entries, self.classes.len(), cols)
    }
}

/// Builds the cost matrix of weighted mean squared-Euclidean distances
/// between each class's binarized codes and each candidate column.
///
/// Entry `(c, m)` is `sum_x w_x * ||sign(h_x) - z_m||^2 / sum_x w_x` over the
/// samples `x` carrying class `c`, with `w_x = 1 / ||y_x||_1`, computed
/// exactly in rational arithmetic. On single-label data this reduces to the
/// plain per-class mean.
pub fn build_cost_matrix(
    codes: &[BinaryCode],
    labels: &[LabelMask],
    class_count: usize,
    columns: &[BinaryCode],
) -> Result<CostMatrix> {
    if codes.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} codes vs {} label records",
            codes.len(),
            labels.len()
        )));
    }
    let mut acc = CostAccumulator::new(columns.to_vec(), class_count)?;
    for (code, mask) in codes.iter().zip(labels) {
        acc.add_sample(code, mask)?;
    }
    acc.finalize()
}

/// Exact minimum-cost injective assignment of rows to columns.
///
/// Returns the row-to-column map and the exact total cost.
pub fn hungarian_assign(cost: &CostMatrix) -> Result<(Vec<usize>, BigRational)> {
    if cost.rows() > cost.cols() {
        return Err(Error::InfeasibleShape {
            rows: cost.rows(),
            cols: cost.cols(),
        });
    }
    // Common-denominator scaling to integers keeps the solve exact.
    let mut scale = BigInt::from(1);
    for e in &cost.entries {
        scale = scale.lcm(e.denom());
    }
    let ints: Vec<BigInt> = cost
        .entries
        .iter()
        .map(|e| e.numer() * (&scale / e.denom()))
        .collect();

    let fits_i64 = ints.iter().all(|v| v.to_i64().is_some());
    let assignment = if fits_i64 {
        let ints: Vec<i128> = ints.iter().map(|v| v.to_i128().unwrap()).collect();
        kuhn_munkres(&ints, cost.rows(), cost.cols(), i128::MAX / 4)
    } else {
        let inf: BigInt = ints
            .iter()
            .map(|v| v.abs())
            .max()
            .unwrap_or_else(BigInt::zero)
            * BigInt::from(4 * (cost.rows() + cost.cols() + 1))
            + BigInt::from(1);
        kuhn_munkres(&ints, cost.rows(), cost.cols(), inf)
    };

    let total = assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| cost.get(r, c).clone())
        .fold(BigRational::zero(), |a, b| a + b);
    Ok((assignment, total))
}

/// Kuhn-Munkres with row/column potentials over any ordered additive type;
/// exact for integers. `rows <= cols` is assumed.
fn kuhn_munkres<T>(cost: &[T], rows: usize, cols: usize, inf: T) -> Vec<usize>
where
    T: Clone + Ord + Zero + std::ops::Sub<Output = T> + std::ops::AddAssign + std::ops::SubAssign,
{
    let at = |r: usize, c: usize| cost[r * cols + c].clone();
    // 1-indexed potentials and matches; column 0 is the virtual start.
    let mut u = vec![T::zero(); rows + 1];
    let mut v = vec![T::zero(); cols + 1];
    let mut matched_row = vec![0usize; cols + 1]; // 0 = free
    let mut way = vec![0usize; cols + 1];

    for row in 1..=rows {
        matched_row[0] = row;
        let mut j0 = 0usize;
        let mut min_slack = vec![inf.clone(); cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf.clone();
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let mut cur = at(i0 - 1, j - 1);
                cur -= u[i0].clone();
                cur -= v[j].clone();
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j].clone();
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[matched_row[j]] += delta.clone();
                    v[j] -= delta.clone();
                } else {
                    min_slack[j] -= delta.clone();
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Augment along the alternating path back to the virtual column.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; rows];
    for j in 1..=cols {
        let r = matched_row[j];
        if r != 0 {
            assignment[r - 1] = j - 1;
        }
    }
    assignment
}

/// Greedy assignment: classes take, in `class_order`, the cheapest still
/// unassigned column (ties broken toward the lowest column index).
pub fn greedy_assign(
    cost: &CostMatrix,
    class_order: &[usize],
) -> Result<(Vec<usize>, BigRational)> {
    if cost.rows() > cost.cols() {
        return Err(Error::InfeasibleShape {
            rows: cost.rows(),
            cols: cost.cols(),
        });
    }
    let mut seen = vec![false; cost.rows()];
    if class_order.len() != cost.rows()
        || !class_order.iter().all(|&c| {
            if c >= cost.rows() || seen[c] {
                false
            } else {
                seen[c] = true;
                true
            }
        })
    {
        return Err(Error::InvalidParameter(format!(
            "class order {class_order:?} is not a permutation of 0..{}",
            cost.rows()
        )));
    }

    let mut taken = vec![false; cost.cols()];
    let mut assignment = vec![usize::MAX; cost.rows()];
    let mut total = BigRational::zero();
    for &class in class_order {
        let mut best: Option<usize> = None;
        for col in 0..cost.cols() {
            if taken[col] {
                continue;
            }
            match best {
                None => best = Some(col),
                Some(b) if cost.get(class, col) < cost.get(class, b) => best = Some(col),
                _ => {}
            }
        }
        let col = best.expect("rows <= cols guarantees a free column");
        taken[col] = true;
        assignment[class] = col;
        total += cost.get(class, col).clone();
    }
    Ok((assignment, total))
}

/// Distinct sub-codes of one head, each mapped back to the lowest original
/// codebook column carrying it.
#[derive(Debug, Clone)]
pub struct SubCodebook {
    distinct: Vec<BinaryCode>,
    original: Vec<usize>,
}

impl SubCodebook {
    pub fn for_head(codebook: &Codebook, layout: HeadLayout, head: usize) -> Result<Self> {
        let mut seen = std::collections::HashMap::new();
        let mut distinct = Vec::new();
        let mut original = Vec::new();
        for m in 0..codebook.len() {
            let slice = head_slice(codebook.code(m), layout, head)?;
            if !seen.contains_key(&slice) {
                seen.insert(slice.clone(), distinct.len());
                distinct.push(slice);
                original.push(m);
            }
        }
        Ok(Self { distinct, original })
    }

    pub fn distinct(&self) -> &[BinaryCode] {
        &self.distinct
    }

    /// Lowest original codebook column for distinct sub-code `i`.
    pub fn original_column(&self, i: usize) -> usize {
        self.original[i]
    }
}

/// Injective per-head map from classes to codebook columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterAssignment {
    per_head: Vec<Vec<usize>>,
    layout: HeadLayout,
}

impl CenterAssignment {
    /// Initial assignment: one codebook row per class, the same column
    /// across all heads.
    pub fn initial(columns: Vec<usize>, layout: HeadLayout) -> Self {
        let per_head = vec![columns; layout.heads()];
        Self { per_head, layout }
    }

    pub fn from_per_head(per_head: Vec<Vec<usize>>, layout: HeadLayout) -> Result<Self> {
        if per_head.len() != layout.heads() {
            return Err(Error::InvalidParameter(format!(
                "{} head maps for a {}-head layout",
                per_head.len(),
                layout.heads()
            )));
        }
        let classes = per_head.first().map(|m| m.len()).unwrap_or(0);
        if classes == 0 || per_head.iter().any(|m| m.len() != classes) {
            return Err(Error::InvalidParameter(
                "per-head maps must cover the same nonzero class count".into(),
            ));
        }
        Ok(Self { per_head, layout })
    }

    pub fn layout(&self) -> HeadLayout {
        self.layout
    }

    pub fn classes(&self) -> usize {
        self.per_head[0].len()
    }

    pub fn per_head(&self) -> &[Vec<usize>] {
        &self.per_head
    }

    /// Materialized center of class `c`: per-head sub-codes concatenated.
    pub fn center(&self, codebook: &Codebook, c: usize) -> Result<BinaryCode> {
        let parts: Vec<BinaryCode> = (0..self.layout.heads())
            .map(|h| head_slice(codebook.code(self.per_head[h][c]), self.layout, h))
            .collect::<Result<_>>()?;
        concat_heads(&parts)
    }

    pub fn centers(&self, codebook: &Codebook) -> Result<Vec<BinaryCode>> {
        (0..self.classes())
            .map(|c| self.center(codebook, c))
            .collect()
    }
}

/// On-disk form of an assignment; centers are bit strings with bit 0 first
/// and '1' marking +1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentFile {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub per_head: Vec<Vec<usize>>,
    pub centers: Vec<String>,
}

impl AssignmentFile {
    pub fn build(assignment: &CenterAssignment, codebook: &Codebook) -> Result<Self> {
        let centers = assignment
            .centers(codebook)?
            .iter()
            .map(|c| c.to_bit_string())
            .collect();
        Ok(Self {
            k: codebook.bits(),
            m: codebook.len(),
            h: assignment.layout().heads(),
            per_head: assignment.per_head().to_vec(),
            centers,
        })
    }

    pub fn to_assignment(&self) -> Result<CenterAssignment> {
        let layout = HeadLayout::for_bits(self.k, self.h)?;
        CenterAssignment::from_per_head(self.per_head.clone(), layout)
    }

    pub fn center_codes(&self) -> Result<Vec<BinaryCode>> {
        self.centers
            .iter()
            .map(|s| BinaryCode::from_bit_string(s))
            .collect()
    }
}

/// Result of one reassignment: the new assignment and the exact per-head
/// solver totals.
#[derive(Debug, Clone)]
pub struct ReassignOutcome {
    pub assignment: CenterAssignment,
    pub per_head_cost: Vec<BigRational>,
}

/// Solves the per-head assignment over already-built cost matrices.
pub fn solve_heads(
    subs: &[SubCodebook],
    costs: &[CostMatrix],
    layout: HeadLayout,
    class_count: usize,
    solver: Solver,
    order_mode: GreedyOrderMode,
    rng: &mut impl Rng,
) -> Result<ReassignOutcome> {
    let mut per_head = Vec::with_capacity(layout.heads());
    let mut per_head_cost = Vec::with_capacity(layout.heads());
    let shared_order = match (solver, order_mode) {
        (Solver::Greedy, GreedyOrderMode::PerEvent) => Some(draw_order(class_count, rng)),
        _ => None,
    };
    for (head, (sub, cost)) in subs.iter().zip(costs).enumerate() {
        if sub.distinct().len() < class_count {
            return Err(Error::InfeasibleHead {
                head,
                distinct: sub.distinct().len(),
                classes: class_count,
            });
        }
        let (map, total) = match solver {
            Solver::Hungarian => hungarian_assign(cost)?,
            Solver::Greedy => {
                let order = match &shared_order {
                    Some(o) => o.clone(),
                    None => draw_order(class_count, rng),
                };
                greedy_assign(cost, &order)?
            }
        };
        per_head.push(map.iter().map(|&i| sub.original_column(i)).collect());
        per_head_cost.push(total);
    }
    Ok(ReassignOutcome {
        assignment: CenterAssignment::from_per_head(per_head, layout)?,
        per_head_cost,
    })
}

fn draw_order(classes: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(rng);
    order
}

/// Builds the per-head sub-codebooks and cost matrices for full `K`-bit
/// sample codes.
pub fn head_cost_matrices(
    codes: &[BinaryCode],
    labels: &[LabelMask],
    class_count: usize,
    codebook: &Codebook,
    layout: HeadLayout,
) -> Result<(Vec<SubCodebook>, Vec<CostMatrix>)> {
    if layout.bits() != codebook.bits() {
        return Err(Error::LengthMismatch {
            left: layout.bits(),
            right: codebook.bits(),
        });
    }
    let mut subs = Vec::with_capacity(layout.heads());
    let mut costs = Vec::with_capacity(layout.heads());
    for h in 0..layout.heads() {
        let sub = SubCodebook::for_head(codebook, layout, h)?;
        let sliced: Vec<BinaryCode> = codes
            .iter()
            .map(|c| head_slice(c, layout, h))
            .collect::<Result<_>>()?;
        let cost = build_cost_matrix(&sliced, labels, class_count, sub.distinct())?;
        subs.push(sub);
        costs.push(cost);
    }
    Ok((subs, costs))
}

/// Full reassignment from binarized sample codes: per head, slice, dedup,
/// build the cost matrix, and solve.
pub fn reassign_centers(
    codes: &[BinaryCode],
    labels: &[LabelMask],
    class_count: usize,
    codebook: &Codebook,
    layout: HeadLayout,
    solver: Solver,
    order_mode: GreedyOrderMode,
    rng: &mut impl Rng,
) -> Result<ReassignOutcome> {
    let (subs, costs) = head_cost_matrices(codes, labels, class_count, codebook, layout)?;
    solve_heads(&subs, &costs, layout, class_count, solver, order_mode, rng)
}

/// Approximate reassignment over the full `2^K` space: each class takes the
/// sign of its weighted code sum, falling back to the closest unassigned
/// code (ties toward the lexicographically smallest), found by
/// expanding-radius search rather than materializing the space.
pub fn fullspace_reassign(
    codes: &[BinaryCode],
    labels: &[LabelMask],
    class_count: usize,
    class_order: &[usize],
) -> Result<Vec<BinaryCode>> {
    let k = match codes.first() {
        Some(c) => c.len(),
        None => return Err(Error::InvalidParameter("no sample codes".into())),
    };
    if codes.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} codes vs {} label records",
            codes.len(),
            labels.len()
        )));
    }
    let mut seen = vec![false; class_count];
    if class_order.len() != class_count
        || !class_order.iter().all(|&c| {
            if c >= class_count || seen[c] {
                false
            } else {
                seen[c] = true;
                true
            }
        })
    {
        return Err(Error::InvalidParameter(
            "class order is not a permutation of the classes".into(),
        ));
    }

    // Exact per-bit weighted sums, bucketed by label count.
    let mut nets: Vec<BTreeMap<usize, Vec<i64>>> = vec![BTreeMap::new(); class_count];
    for (code, mask) in codes.iter().zip(labels) {
        if code.len() != k {
            return Err(Error::LengthMismatch {
                left: k,
                right: code.len(),
            });
        }
        let count = mask.count();
        if count == 0 {
            return Err(Error::InvalidParameter("sample has no labels".into()));
        }
        for c in mask.iter() {
            let net = nets[c].entry(count).or_insert_with(|| vec![0i64; k]);
            for (bit, slot) in net.iter_mut().enumerate() {
                *slot += if code.bit(bit) { 1 } else { -1 };
            }
        }
    }

    let mut aggregates = Vec::with_capacity(class_count);
    for (class, buckets) in nets.iter().enumerate() {
        if buckets.is_empty() {
            return Err(Error::EmptyClass { class });
        }
        let mut z = BinaryCode::zeros(k);
        for bit in 0..k {
            let sum = buckets
                .iter()
                .map(|(&count, net)| BigRational::new(BigInt::from(net[bit]), BigInt::from(count)))
                .fold(BigRational::zero(), |a, b| a + b);
            // sign(0) = +1
            if !sum.is_negative() {
                z.set_bit(bit, true);
            }
        }
        aggregates.push(z);
    }

    let mut assigned: std::collections::HashSet<BinaryCode> = std::collections::HashSet::new();
    let mut centers: Vec<Option<BinaryCode>> = vec![None; class_count];
    for &class in class_order {
        let z = &aggregates[class];
        let chosen = if !assigned.contains(z) {
            z.clone()
        } else {
            nearest_unassigned(z, &assigned)
        };
        assigned.insert(chosen.clone());
        centers[class] = Some(chosen);
    }
    Ok(centers.into_iter().map(|c| c.unwrap()).collect())
}

/// Closest code to `z` not in `assigned`, by Hamming distance then
/// lexicographic order, via expanding-radius enumeration of bit flips.
fn nearest_unassigned(
    z: &BinaryCode,
    assigned: &std::collections::HashSet<BinaryCode>,
) -> BinaryCode {
    let k = z.len();
    for radius in 1..=k {
        let mut best: Option<BinaryCode> = None;
        let mut positions: Vec<usize> = (0..radius).collect();
        loop {
            let candidate = z.with_flipped(&positions);
            if !assigned.contains(&candidate)
                && best.as_ref().map(|b| candidate < *b).unwrap_or(true)
            {
                best = Some(candidate);
            }
            // next lexicographic combination of `radius` positions out of k
            let mut i = radius;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if positions[i] != i + k - radius {
                    positions[i] += 1;
                    for j in i + 1..radius {
                        positions[j] = positions[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    positions.clear();
                    break;
                }
            }
            if positions.is_empty() {
                break;
            }
        }
        if let Some(found) = best {
            return found;
        }
    }
    unreachable!("2^k codes cannot all be assigned with fewer classes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::sample_codebook_unique;
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn matrix(rows: &[&[i64]]) -> CostMatrix {
        let cols = rows[0].len();
        let entries = rows
            .iter()
            .flat_map(|r| r.iter().map(|&v| ratio(v, 1)))
            .collect();
        CostMatrix::from_entries(entries, rows.len(), cols).unwrap()
    }

    fn single_label(classes: usize, class: usize) -> LabelMask {
        LabelMask::from_classes(classes, &[class]).unwrap()
    }

    // Exhaustive oracle over all injective row -> column maps.
    fn brute_force_min(cost: &CostMatrix) -> BigRational {
        fn recurse(
            cost: &CostMatrix,
            row: usize,
            used: &mut Vec<bool>,
            acc: BigRational,
            best: &mut Option<BigRational>,
        ) {
            if row == cost.rows() {
                if best.as_ref().map(|b| acc < *b).unwrap_or(true) {
                    *best = Some(acc);
                }
                return;
            }
            for col in 0..cost.cols() {
                if !used[col] {
                    used[col] = true;
                    recurse(
                        cost,
                        row + 1,
                        used,
                        acc.clone() + cost.get(row, col).clone(),
                        best,
                    );
                    used[col] = false;
                }
            }
        }
        let mut best = None;
        recurse(
            cost,
            0,
            &mut vec![false; cost.cols()],
            BigRational::zero(),
            &mut best,
        );
        best.unwrap()
    }

    #[test]
    fn cost_matrix_zero_distance_entry() {
        let z = BinaryCode::from_signs(&[1, -1, 1]);
        let cost = build_cost_matrix(&[z.clone()], &[single_label(1, 0)], 1, &[z.clone()]).unwrap();
        assert!(cost.get(0, 0).is_zero());
    }

    #[test]
    fn cost_matrix_unweighted_mean() {
        // Two single-label samples at Hamming distances 1 and 3 from the
        // column: mean of 4*1 and 4*3 is 8.
        let col = BinaryCode::from_signs(&[1, 1, 1, 1]);
        let a = BinaryCode::from_signs(&[-1, 1, 1, 1]);
        let b = BinaryCode::from_signs(&[-1, -1, -1, 1]);
        let cost = build_cost_matrix(
            &[a, b],
            &[single_label(1, 0), single_label(1, 0)],
            1,
            &[col],
        )
        .unwrap();
        assert_eq!(cost.get(0, 0), &ratio(8, 1));
    }

    #[test]
    fn cost_matrix_weighted_example() {
        // One two-label sample at distance 2 and one single-label sample at
        // distance 0: (1/2 * 8 + 1 * 0) / (1/2 + 1) = 8/3.
        let col = BinaryCode::from_signs(&[1, 1, 1, 1]);
        let far = BinaryCode::from_signs(&[-1, -1, 1, 1]);
        let near = col.clone();
        let labels = [
            LabelMask::from_classes(2, &[0, 1]).unwrap(),
            single_label(2, 0),
        ];
        let cost = build_cost_matrix(&[far.clone(), near], &labels, 2, &[col.clone()]).unwrap();
        assert_eq!(cost.get(0, 0), &ratio(8, 3));

        // Cross-check against a float oracle on unpacked vectors.
        let oracle = {
            let d = |a: &BinaryCode, b: &BinaryCode| -> f64 {
                a.to_signs_f64()
                    .iter()
                    .zip(b.to_signs_f64())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum()
            };
            (0.5 * d(&far, &col) + 1.0 * 0.0) / 1.5
        };
        assert!((cost.get_f64(0, 0) - oracle).abs() < 1e-12);
    }

    #[test]
    fn cost_matrix_reports_empty_class() {
        let z = BinaryCode::from_signs(&[1, -1]);
        let err = build_cost_matrix(&[z.clone()], &[single_label(3, 0)], 3, &[z]).unwrap_err();
        assert!(matches!(err, Error::EmptyClass { class: 1 }));
    }

    #[test]
    fn cost_matrix_width_mismatch_errors() {
        let sample = BinaryCode::from_signs(&[1, -1, 1]);
        let col = BinaryCode::from_signs(&[1, -1]);
        assert!(build_cost_matrix(&[sample], &[single_label(1, 0)], 1, &[col]).is_err());
    }

    #[test]
    fn hungarian_diagonal_dominance() {
        let (map, total) = hungarian_assign(&matrix(&[&[1, 2], &[2, 1]])).unwrap();
        assert_eq!(map, vec![0, 1]);
        assert_eq!(total, ratio(2, 1));
    }

    #[test]
    fn hungarian_degenerate_ties() {
        let (map, total) = hungarian_assign(&matrix(&[&[0, 0], &[0, 0]])).unwrap();
        assert!(total.is_zero());
        assert_ne!(map[0], map[1]);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut r = rng(42);
        for _ in 0..200 {
            let rows = r.random_range(1..=5usize);
            let cols = r.random_range(rows..=8usize);
            let entries: Vec<BigRational> = (0..rows * cols)
                .map(|_| ratio(r.random_range(0..50), 1))
                .collect();
            let cost = CostMatrix::from_entries(entries, rows, cols).unwrap();
            let (map, total) = hungarian_assign(&cost).unwrap();
            assert_eq!(total, brute_force_min(&cost));
            let set: std::collections::HashSet<_> = map.iter().collect();
            assert_eq!(set.len(), rows);
        }
    }

    #[test]
    fn hungarian_infeasible_shape() {
        assert!(matches!(
            hungarian_assign(&matrix(&[&[1], &[2]])),
            Err(Error::InfeasibleShape { rows: 2, cols: 1 })
        ));
    }

    #[test]
    fn greedy_is_order_dependent() {
        let cost = matrix(&[&[0, 5], &[0, 9]]);
        let (map, total) = greedy_assign(&cost, &[1, 0]).unwrap();
        assert_eq!(map, vec![1, 0]);
        assert_eq!(total, ratio(5, 1));
        let (map, total) = greedy_assign(&cost, &[0, 1]).unwrap();
        assert_eq!(map, vec![0, 1]);
        assert_eq!(total, ratio(9, 1));
    }

    #[test]
    fn greedy_single_row_takes_argmin() {
        let (map, total) = greedy_assign(&matrix(&[&[7, 3, 5]]), &[0]).unwrap();
        assert_eq!(map, vec![1]);
        assert_eq!(total, ratio(3, 1));
    }

    #[test]
    fn greedy_rejects_bad_order() {
        let cost = matrix(&[&[1, 2], &[3, 4]]);
        assert!(greedy_assign(&cost, &[0, 0]).is_err());
        assert!(greedy_assign(&cost, &[0]).is_err());
        assert!(greedy_assign(&cost, &[0, 2]).is_err());
    }

    #[test]
    fn greedy_ties_take_lowest_column() {
        let (map, _) = greedy_assign(&matrix(&[&[4, 4, 4]]), &[0]).unwrap();
        assert_eq!(map, vec![0]);
    }

    proptest! {
        #[test]
        fn greedy_never_beats_hungarian(seed in 0u64..300) {
            let mut r = rng(seed);
            let rows = r.random_range(1..=5usize);
            let cols = r.random_range(rows..=7usize);
            let entries: Vec<BigRational> =
                (0..rows * cols).map(|_| ratio(r.random_range(0..30), 1)).collect();
            let cost = CostMatrix::from_entries(entries, rows, cols).unwrap();
            let (_, optimal) = hungarian_assign(&cost).unwrap();
            let order = draw_order(rows, &mut r);
            let (_, greedy_total) = greedy_assign(&cost, &order).unwrap();
            prop_assert!(greedy_total >= optimal);
        }

        #[test]
        fn scaling_by_four_preserves_assignments(seed in 0u64..100) {
            let mut r = rng(seed);
            let rows = r.random_range(1..=4usize);
            let cols = r.random_range(rows..=6usize);
            let base: Vec<i64> = (0..rows * cols).map(|_| r.random_range(0..20)).collect();
            let cost = CostMatrix::from_entries(
                base.iter().map(|&v| ratio(v, 1)).collect(), rows, cols).unwrap();
            let scaled = CostMatrix::from_entries(
                base.iter().map(|&v| ratio(4 * v, 1)).collect(), rows, cols).unwrap();
            let (map_a, _) = hungarian_assign(&cost).unwrap();
            let (map_b, _) = hungarian_assign(&scaled).unwrap();
            prop_assert_eq!(map_a, map_b);
            let order = draw_order(rows, &mut r);
            let (g_a, _) = greedy_assign(&cost, &order).unwrap();
            let (g_b, _) = greedy_assign(&scaled, &order).unwrap();
            prop_assert_eq!(g_a, g_b);
        }

        #[test]
        fn weighted_equals_unweighted_on_single_label(seed in 0u64..100) {
            let mut r = rng(seed);
            let k = 6usize;
            let classes = 3usize;
            let cols = sample_codebook_unique(k, 5, &mut r).unwrap();
            let mut codes = Vec::new();
            let mut labels = Vec::new();
            for i in 0..12 {
                let signs: Vec<i8> = (0..k).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect();
                codes.push(BinaryCode::from_signs(&signs));
                // first `classes` samples guarantee every class is populated
                let class = if i < classes { i } else { r.random_range(0..classes) };
                labels.push(single_label(classes, class));
            }
            let weighted =
                build_cost_matrix(&codes, &labels, classes, cols.codes()).unwrap();
            // Unweighted oracle: plain mean of 4 * Hamming per class.
            for c in 0..classes {
                let members: Vec<usize> = labels
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| m.contains(c))
                    .map(|(i, _)| i)
                    .collect();
                prop_assume!(!members.is_empty());
                for (m, col) in cols.codes().iter().enumerate() {
                    let sum: u64 = members
                        .iter()
                        .map(|&i| 4 * hamming_distance(&codes[i], col).unwrap() as u64)
                        .sum();
                    let plain = BigRational::new(BigInt::from(sum), BigInt::from(members.len()));
                    prop_assert_eq!(weighted.get(c, m), &plain);
                }
            }
        }
    }

    #[test]
    fn synthetic_single_label_weighted_cost_equals_plain_mean() {
        // rho = 0 means one label per sample, so the weighted form collapses
        // to the unweighted per-class mean on a generated dataset too.
        use crate::data::{generate_synthetic, SynthSpec};
        let synth = generate_synthetic(&SynthSpec {
            classes: 4,
            superclasses: 2,
            dim: 6,
            samples_per_class: 8,
            rho: 0.0,
            seed: 13,
            ..SynthSpec::default()
        })
        .unwrap();
        let ds = &synth.dataset;
        let columns = sample_codebook_unique(5, 6, &mut rng(13))
            .unwrap()
            .codes()
            .to_vec();
        let codes: Vec<BinaryCode> = (0..ds.len())
            .map(|n| {
                let signs: Vec<f64> = ds.feature(n).iter().map(|&v| v as f64).collect();
                BinaryCode::from_reals(&signs[..5])
            })
            .collect();
        let weighted = build_cost_matrix(&codes, ds.labels(), 4, &columns).unwrap();
        for c in 0..4 {
            let members = ds.class_members(c);
            for (m, col) in columns.iter().enumerate() {
                let sum: u64 = members
                    .iter()
                    .map(|&i| 4 * hamming_distance(&codes[i], col).unwrap() as u64)
                    .sum();
                let plain = BigRational::new(BigInt::from(sum), BigInt::from(members.len()));
                assert_eq!(weighted.get(c, m), &plain);
            }
        }
    }

    fn assignment_fixture() -> (Codebook, HeadLayout, Vec<BinaryCode>, Vec<LabelMask>) {
        // Four 4-bit codebook rows with distinct 2-bit halves.
        let rows = vec![
            BinaryCode::from_signs(&[-1, -1, -1, -1]),
            BinaryCode::from_signs(&[1, -1, 1, -1]),
            BinaryCode::from_signs(&[-1, 1, -1, 1]),
            BinaryCode::from_signs(&[1, 1, 1, 1]),
        ];
        let codebook = Codebook::new(rows.clone()).unwrap();
        let layout = HeadLayout::for_bits(4, 2).unwrap();
        // Each class's samples sit exactly on one codebook row.
        let mut codes = Vec::new();
        let mut labels = Vec::new();
        for (c, row) in rows.iter().enumerate() {
            for _ in 0..3 {
                codes.push(row.clone());
                labels.push(single_label(4, c));
            }
        }
        (codebook, layout, codes, labels)
    }

    #[test]
    fn reassign_finds_zero_cost_fixture() {
        let (codebook, layout, codes, labels) = assignment_fixture();
        for solver in [Solver::Greedy, Solver::Hungarian] {
            let out = reassign_centers(
                &codes,
                &labels,
                4,
                &codebook,
                layout,
                solver,
                GreedyOrderMode::PerHead,
                &mut rng(1),
            )
            .unwrap();
            assert!(out.per_head_cost.iter().all(|t| t.is_zero()));
            let centers = out.assignment.centers(&codebook).unwrap();
            for (c, center) in centers.iter().enumerate() {
                assert_eq!(center, codebook.code(c));
            }
        }
    }

    #[test]
    fn single_head_matches_direct_composition() {
        let (codebook, _, codes, labels) = assignment_fixture();
        let layout = HeadLayout::for_bits(4, 1).unwrap();
        let out = reassign_centers(
            &codes,
            &labels,
            4,
            &codebook,
            layout,
            Solver::Hungarian,
            GreedyOrderMode::PerHead,
            &mut rng(0),
        )
        .unwrap();

        let cost = build_cost_matrix(&codes, &labels, 4, codebook.codes()).unwrap();
        let (map, total) = hungarian_assign(&cost).unwrap();
        assert_eq!(out.assignment.per_head()[0], map);
        assert_eq!(out.per_head_cost[0], total);
    }

    #[test]
    fn reassign_reports_infeasible_head() {
        // Both rows share the same first half, so head 0 has 1 distinct
        // sub-code for 2 classes.
        let rows = vec![
            BinaryCode::from_signs(&[1, 1, -1, -1]),
            BinaryCode::from_signs(&[1, 1, 1, 1]),
        ];
        let codebook = Codebook::new(rows.clone()).unwrap();
        let layout = HeadLayout::for_bits(4, 2).unwrap();
        let codes = vec![rows[0].clone(), rows[1].clone()];
        let labels = vec![single_label(2, 0), single_label(2, 1)];
        let err = reassign_centers(
            &codes,
            &labels,
            2,
            &codebook,
            layout,
            Solver::Greedy,
            GreedyOrderMode::PerHead,
            &mut rng(0),
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::InfeasibleHead {
                    head: 0,
                    distinct: 1,
                    classes: 2
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn reassign_is_idempotent_at_fixed_point() {
        let (codebook, layout, codes, labels) = assignment_fixture();
        let first = reassign_centers(
            &codes,
            &labels,
            4,
            &codebook,
            layout,
            Solver::Greedy,
            GreedyOrderMode::PerHead,
            &mut rng(5),
        )
        .unwrap();
        let second = reassign_centers(
            &codes,
            &labels,
            4,
            &codebook,
            layout,
            Solver::Greedy,
            GreedyOrderMode::PerHead,
            &mut rng(99),
        )
        .unwrap();
        assert!(second.per_head_cost.iter().all(|t| t.is_zero()));
        assert_eq!(
            first.assignment.centers(&codebook).unwrap(),
            second.assignment.centers(&codebook).unwrap()
        );
    }

    #[test]
    fn fullspace_constant_class_keeps_its_code() {
        let b = BinaryCode::from_signs(&[1, -1, 1]);
        let codes = vec![b.clone(), b.clone(), b.clone()];
        let labels = vec![single_label(1, 0); 3];
        let centers = fullspace_reassign(&codes, &labels, 1, &[0]).unwrap();
        assert_eq!(centers[0], b);
    }

    #[test]
    fn fullspace_single_sample_center_is_its_code() {
        let b = BinaryCode::from_signs(&[-1, 1, -1, 1]);
        let centers = fullspace_reassign(&[b.clone()], &[single_label(1, 0)], 1, &[0]).unwrap();
        assert_eq!(centers[0], b);
    }

    #[test]
    fn fullspace_conflict_matches_brute_force() {
        // Two classes with identical aggregates; the loser must take the
        // nearest unassigned code, verified against all 8 codes.
        let b = BinaryCode::from_signs(&[1, -1, 1]);
        let codes = vec![b.clone(), b.clone()];
        let labels = vec![single_label(2, 0), single_label(2, 1)];
        let centers = fullspace_reassign(&codes, &labels, 2, &[0, 1]).unwrap();
        assert_eq!(centers[0], b);
        assert_eq!(hamming_distance(&centers[1], &b).unwrap(), 1);

        let mut all: Vec<BinaryCode> = (0..8u64).map(|v| BinaryCode::from_value(v, 3)).collect();
        all.retain(|c| *c != b);
        all.sort_by_key(|c| (hamming_distance(c, &b).unwrap(), c.clone()));
        assert_eq!(centers[1], all[0]);
    }

    #[test]
    fn fullspace_cascade_matches_incremental_brute_force() {
        // Ten classes all voting for the same 4-bit code force the search
        // out to radius 2 and beyond; replay the same tie-breaking rule
        // (distance, then lexicographic) over the enumerated space.
        let k = 4;
        let classes = 10;
        let b = BinaryCode::from_signs(&[1, -1, -1, 1]);
        let codes = vec![b.clone(); classes];
        let labels: Vec<LabelMask> = (0..classes).map(|c| single_label(classes, c)).collect();
        let order: Vec<usize> = (0..classes).collect();
        let centers = fullspace_reassign(&codes, &labels, classes, &order).unwrap();

        let mut taken: std::collections::HashSet<BinaryCode> = std::collections::HashSet::new();
        for center in &centers {
            let mut candidates: Vec<BinaryCode> = (0..1u64 << k)
                .map(|v| BinaryCode::from_value(v, k))
                .filter(|c| !taken.contains(c))
                .collect();
            candidates.sort_by_key(|c| (hamming_distance(c, &b).unwrap(), c.clone()));
            assert_eq!(center, &candidates[0]);
            taken.insert(center.clone());
        }
        let distinct: std::collections::HashSet<_> = centers.iter().collect();
        assert_eq!(distinct.len(), classes);
    }

    #[test]
    fn fullspace_multilabel_weighting_breaks_vote() {
        // One two-label sample at +1 vs one single-label sample at -1:
        // 1/2 - 1 < 0 so the sign goes to -1.
        let plus = BinaryCode::from_signs(&[1]);
        let minus = BinaryCode::from_signs(&[-1]);
        let labels = vec![
            LabelMask::from_classes(2, &[0, 1]).unwrap(),
            single_label(2, 0),
        ];
        let centers = fullspace_reassign(&[plus, minus], &labels, 2, &[0, 1]).unwrap();
        assert_eq!(centers[0], BinaryCode::from_signs(&[-1]));
    }

    #[test]
    fn assignment_file_round_trip() {
        let (codebook, layout, codes, labels) = assignment_fixture();
        let out = reassign_centers(
            &codes,
            &labels,
            4,
            &codebook,
            layout,
            Solver::Hungarian,
            GreedyOrderMode::PerHead,
            &mut rng(0),
        )
        .unwrap();
        let file = AssignmentFile::build(&out.assignment, &codebook).unwrap();
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"K\":4") && json.contains("\"per_head\""));
        let parsed: AssignmentFile = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.to_assignment().unwrap(), out.assignment);
        assert_eq!(
            parsed.center_codes().unwrap(),
            out.assignment.centers(&codebook).unwrap()
        );
    }
}
