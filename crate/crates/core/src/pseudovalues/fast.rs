//! Exact leave-one-out SOPs without rebuilding the estimator per deletion.
//!
//! Deleting one subject changes the event table only in the rows of the
//! states it occupies, and only at the times it is at risk there. For each
//! non-absorbing state `l` a segment tree holds the factors `I + dA(u)` with
//! that subject's weight removed from row `l`; a deleted subject's SOP is
//! then a row vector pushed through `O(log J)` tree nodes per sojourn, plus
//! one factor computed on the fly at each of its own transition times.
//!
//! `1/K(u-)` multiplies both `dN(u)` and `M(u)`, so it cancels in every
//! increment and is not needed here.

use rayon::prelude::*;

use crate::error::Result;
use crate::estimators::engine::{fill_row, initial_totals, records, vec_mat, EventTable, RowInput, SubjectRecord};
use crate::panel::{index_range, Panel};

/// `grid.len() * q` values for one subject.
type Curve = Vec<f64>;

#[derive(Debug)]
struct FactorTree {
    q: usize,
    offset: usize,
    len: usize,
    size: usize,
    nodes: Vec<f64>,
}

impl FactorTree {
    /// Tree over table indices `offset..offset + len`; `leaf(k, out)` writes
    /// the factor at table index `k`.
    fn build(
        q: usize,
        offset: usize,
        len: usize,
        mut leaf: impl FnMut(usize, &mut [f64]) -> Result<()>,
    ) -> Result<Self> {
        let qq = q * q;
        let size = len.next_power_of_two().max(1);
        let mut nodes = vec![0.0; 2 * size * qq];
        for i in 0..size {
            let node = &mut nodes[(size + i) * qq..(size + i + 1) * qq];
            if i < len {
                leaf(offset + i, node)?;
            } else {
                for d in 0..q {
                    node[d * q + d] = 1.0;
                }
            }
        }
        for i in (1..size).rev() {
            let (head, tail) = nodes.split_at_mut(2 * i * qq);
            let out = &mut head[i * qq..(i + 1) * qq];
            let (l, r) = tail.split_at(qq);
            for row in 0..q {
                vec_mat(&l[row * q..(row + 1) * q], &r[..qq], &mut out[row * q..(row + 1) * q]);
            }
        }
        Ok(Self {
            q,
            offset,
            len,
            size,
            nodes,
        })
    }

    fn node(&self, i: usize) -> &[f64] {
        let qq = self.q * self.q;
        &self.nodes[i * qq..(i + 1) * qq]
    }

    /// `v <- v * F_lo * ... * F_{hi-1}` for table indices `lo..hi`.
    fn apply(&self, lo: usize, hi: usize, v: &mut Vec<f64>, tmp: &mut Vec<f64>) {
        debug_assert!(self.offset <= lo && hi <= self.offset + self.len);
        let mut l = lo - self.offset + self.size;
        let mut r = hi - self.offset + self.size;
        let mut right = [0usize; 64];
        let mut nr = 0;
        while l < r {
            if l & 1 == 1 {
                vec_mat(v, self.node(l), tmp);
                std::mem::swap(v, tmp);
                l += 1;
            }
            if r & 1 == 1 {
                r -= 1;
                right[nr] = r;
                nr += 1;
            }
            l >>= 1;
            r >>= 1;
        }
        for &node in right[..nr].iter().rev() {
            vec_mat(v, self.node(node), tmp);
            std::mem::swap(v, tmp);
        }
    }
}

/// Integer at-risk and transition counts of one cluster over table indices
/// `lo..hi`.
struct ClusterCounts {
    lo: usize,
    hi: usize,
    at_risk: Vec<i64>,
    trans: Vec<i64>,
    initial: Vec<i64>,
}

/// A change applied to every row of the base table: `coef` times the
/// cluster's counts added to the weighted totals, `count_sign` times them to
/// the integer counts.
#[derive(Clone, Copy)]
struct ClusterShift<'a> {
    counts: &'a ClusterCounts,
    coef: f64,
    count_sign: i64,
}

/// One subject taken out: weight `b` from row `state`, and from the
/// transition `state -> to` when it jumps at this time.
#[derive(Clone, Copy)]
struct Removal {
    b: f64,
    state: usize,
    to: Option<usize>,
}

struct Scratch {
    trans: Vec<f64>,
    trans_n: Vec<i64>,
}

impl Scratch {
    fn new(q: usize) -> Self {
        Self {
            trans: vec![0.0; q],
            trans_n: vec![0; q],
        }
    }
}

fn factor(
    table: &EventTable,
    k: usize,
    shift: Option<ClusterShift<'_>>,
    removal: Option<Removal>,
    scratch: &mut Scratch,
    out: &mut [f64],
) -> Result<()> {
    let q = table.q;
    for from in 0..q {
        let base = (k * q + from) * q;
        let mut at_risk = table.at_risk[k * q + from];
        let mut at_risk_n = table.at_risk_n[k * q + from];
        scratch.trans.copy_from_slice(&table.trans[base..base + q]);
        scratch.trans_n.copy_from_slice(&table.trans_n[base..base + q]);
        if let Some(s) = shift {
            if (s.counts.lo..s.counts.hi).contains(&k) {
                let kk = k - s.counts.lo;
                let c = s.counts.at_risk[kk * q + from];
                at_risk += s.coef * c as f64;
                at_risk_n += s.count_sign * c;
                for to in 0..q {
                    let c = s.counts.trans[(kk * q + from) * q + to];
                    scratch.trans[to] += s.coef * c as f64;
                    scratch.trans_n[to] += s.count_sign * c;
                }
            }
        }
        if let Some(r) = removal.filter(|r| r.state == from) {
            at_risk -= r.b;
            at_risk_n -= 1;
            if let Some(to) = r.to {
                scratch.trans[to] -= r.b;
                scratch.trans_n[to] -= 1;
            }
        }
        let row = RowInput {
            at_risk,
            at_risk_n,
            trans: &scratch.trans,
            trans_n: &scratch.trans_n,
        };
        fill_row(table.times[k], from, &row, &mut out[from * q..(from + 1) * q])?;
    }
    Ok(())
}

/// A sojourn in table-index form: at risk in `state` on `lo..hi`, leaving
/// for `to` at index `hi - 1` when `to` is set.
#[derive(Debug, Clone, Copy)]
struct Stay {
    state: usize,
    lo: usize,
    hi: usize,
    to: Option<usize>,
}

fn stays(record: &SubjectRecord, times: &[f64]) -> Vec<Stay> {
    record
        .sojourns
        .iter()
        .filter_map(|&(state, a, b)| {
            let (lo, hi) = index_range(times, a, b);
            if lo >= hi {
                return None;
            }
            let to = record
                .jumps
                .iter()
                .find(|&&(t, from, _)| from == state && t == b && times[hi - 1] == t)
                .map(|&(_, _, to)| to);
            Some(Stay { state, lo, hi, to })
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Piece<'a> {
    Tree(&'a FactorTree),
    Jump(Removal),
}

/// Trees for the base factors and, per non-absorbing state, the factors with
/// weight `b` removed from that state's row.
struct TreeSet {
    base: FactorTree,
    variants: Vec<Option<FactorTree>>,
}

impl TreeSet {
    fn build(
        table: &EventTable,
        lo: usize,
        hi: usize,
        shift: Option<ClusterShift<'_>>,
        b: f64,
        occupied: &[bool],
    ) -> Result<Self> {
        let q = table.q;
        let mut scratch = Scratch::new(q);
        let base = FactorTree::build(q, lo, hi - lo, |k, out| factor(table, k, shift, None, &mut scratch, out))?;
        let variants = (0..q)
            .map(|state| {
                if !occupied[state] {
                    return Ok(None);
                }
                let removal = Removal { b, state, to: None };
                // A leaf is only reached by subjects at risk in `state` that
                // do not leave at that time. At other times the removal can
                // make the row inconsistent; those leaves are never read.
                FactorTree::build(q, lo, hi - lo, |k, out| {
                    if factor(table, k, shift, Some(removal), &mut scratch, out).is_err() {
                        out.iter_mut().for_each(|x| *x = 0.0);
                        for d in 0..q {
                            out[d * q + d] = 1.0;
                        }
                    }
                    Ok(())
                })
                .map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { base, variants })
    }
}

/// Pieces covering `0..j` for a subject deleted with weight `b`. `bases`
/// gives the tree to use on each index range where the subject is not at
/// risk; the ranges are in order and cover `0..j`.
fn pieces<'a>(
    stays: &[Stay],
    bases: &[(usize, usize, &'a FactorTree)],
    variants: &'a TreeSet,
    b: f64,
    j: usize,
) -> Vec<(usize, usize, Piece<'a>)> {
    let mut out = Vec::with_capacity(2 * stays.len() + 3);
    let gap = |lo: usize, hi: usize, out: &mut Vec<(usize, usize, Piece<'a>)>| {
        for &(blo, bhi, t) in bases {
            let a = lo.max(blo);
            let z = hi.min(bhi);
            if a < z {
                out.push((a, z, Piece::Tree(t)));
            }
        }
    };
    let mut cur = 0;
    for s in stays {
        gap(cur, s.lo, &mut out);
        let tree = variants.variants[s.state].as_ref().expect("variant tree for occupied state");
        let end = if s.to.is_some() { s.hi - 1 } else { s.hi };
        if s.lo < end {
            out.push((s.lo, end, Piece::Tree(tree)));
        }
        if let Some(to) = s.to {
            out.push((
                s.hi - 1,
                s.hi,
                Piece::Jump(Removal {
                    b,
                    state: s.state,
                    to: Some(to),
                }),
            ));
        }
        cur = s.hi;
    }
    gap(cur, j, &mut out);
    out
}

/// Pushes `pi` through `pieces`, recording it after the first `cuts[g]`
/// factors for every grid point `g`.
fn walk(
    table: &EventTable,
    shift: Option<ClusterShift<'_>>,
    pieces: &[(usize, usize, Piece<'_>)],
    cuts: &[usize],
    mut pi: Vec<f64>,
) -> Result<Curve> {
    let q = table.q;
    let mut tmp = vec![0.0; q];
    let mut f = vec![0.0; q * q];
    let mut scratch = Scratch::new(q);
    let mut out = Vec::with_capacity(cuts.len() * q);
    let mut cur = 0;
    let mut p = 0;
    for &cut in cuts {
        while cur < cut {
            while pieces[p].1 <= cur {
                p += 1;
            }
            let (_, hi, piece) = pieces[p];
            let end = hi.min(cut);
            match piece {
                Piece::Tree(tree) => tree.apply(cur, end, &mut pi, &mut tmp),
                Piece::Jump(removal) => {
                    factor(table, cur, shift, Some(removal), &mut scratch, &mut f)?;
                    vec_mat(&pi, &f, &mut tmp);
                    std::mem::swap(&mut pi, &mut tmp);
                }
            }
            cur = end;
        }
        out.extend_from_slice(&pi);
    }
    Ok(out)
}

/// Everything shared by the deletions of one panel.
pub(super) struct Prepared {
    pub q: usize,
    table: EventTable,
    pub records: Vec<SubjectRecord>,
    stays: Vec<Vec<Stay>>,
    cuts: Vec<usize>,
    /// Cluster index of each subject, cluster-major.
    pub cluster_of: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
}

impl Prepared {
    pub fn new(panel: &Panel, weights: &[f64], grid: &[f64]) -> Self {
        let q = panel.num_states();
        let horizon = *grid.last().expect("nonempty grid");
        let records = records(panel);
        let table = EventTable::build(q, &records, weights, horizon);
        let stays = records.iter().map(|r| stays(r, &table.times)).collect();
        let cuts = grid.iter().map(|&g| table.times.partition_point(|&u| u <= g)).collect();
        Self {
            q,
            table,
            records,
            stays,
            cuts,
            cluster_of: panel.indexed_subjects().map(|(i, _)| i).collect(),
            cluster_sizes: panel.cluster_sizes(),
        }
    }

    fn occupied(&self, subjects: impl Iterator<Item = usize>) -> Vec<bool> {
        let mut occ = vec![false; self.q];
        for s in subjects {
            for st in &self.stays[s] {
                occ[st.state] = true;
            }
        }
        occ
    }

    /// The full-data SOP on the grid.
    pub fn full(&self, pi0: &[f64]) -> Result<Curve> {
        let j = self.table.len();
        let tree = FactorTree::build(self.q, 0, j, |k, out| self.table.factor(k, out))?;
        walk(&self.table, None, &[(0, j, Piece::Tree(&tree))], &self.cuts, pi0.to_vec())
    }

    /// Leave-one-subject-out SOPs with unit weights.
    pub fn leave_one_out(&self) -> Result<Vec<Curve>> {
        let q = self.q;
        let j = self.table.len();
        let n = self.records.len();
        let trees = TreeSet::build(&self.table, 0, j, None, 1.0, &self.occupied(0..n))?;
        let (totals, total) = initial_totals(q, &self.records, &vec![1.0; n]);
        (0..n)
            .into_par_iter()
            .map(|s| {
                let mut pi0 = totals.clone();
                pi0[self.records[s].initial] -= 1.0;
                pi0.iter_mut().for_each(|v| *v /= total - 1.0);
                let pieces = pieces(&self.stays[s], &[(0, j, &trees.base)], &trees, 1.0, j);
                walk(&self.table, None, &pieces, &self.cuts, pi0)
            })
            .collect()
    }

    /// Inverse-cluster-size weighted SOPs without cluster `i`, and without
    /// each subject of cluster `i` (cluster kept at size `n_i - 1`).
    ///
    /// The table must have been built with weights `1 / n_i`.
    pub fn cluster_deletions(&self) -> Result<Vec<(Curve, Vec<Curve>)>> {
        let q = self.q;
        let j = self.table.len();
        let m = self.cluster_sizes.len();
        let global = FactorTree::build(q, 0, j, |k, out| self.table.factor(k, out))?;
        let mut starts = Vec::with_capacity(m + 1);
        starts.push(0);
        for &n in &self.cluster_sizes {
            starts.push(starts.last().unwrap() + n);
        }
        let weights: Vec<f64> = self
            .cluster_of
            .iter()
            .map(|&i| 1.0 / self.cluster_sizes[i] as f64)
            .collect();
        let (totals, total) = initial_totals(q, &self.records, &weights);

        (0..m)
            .into_par_iter()
            .map(|i| {
                let members = starts[i]..starts[i + 1];
                let ni = self.cluster_sizes[i];
                let counts = self.cluster_counts(members.clone());
                let (lo, hi) = (counts.lo, counts.hi);

                // Without cluster i.
                let removed = ClusterShift {
                    counts: &counts,
                    coef: -1.0 / ni as f64,
                    count_sign: -1,
                };
                let mut pi0: Vec<f64> = (0..q)
                    .map(|l| totals[l] - counts.initial[l] as f64 / ni as f64)
                    .collect();
                let rest = total - 1.0;
                pi0.iter_mut().for_each(|v| *v /= rest);
                let without_cluster = self.walk_cluster_out(&global, removed, pi0)?;

                if ni == 1 {
                    return Ok((without_cluster.clone(), vec![without_cluster]));
                }

                // Cluster i reweighted to 1/(n_i - 1), then one member removed.
                let a = 1.0 / (ni as f64 * (ni - 1) as f64);
                let b = 1.0 / (ni - 1) as f64;
                let shift = ClusterShift {
                    counts: &counts,
                    coef: a,
                    count_sign: 0,
                };
                let trees = TreeSet::build(&self.table, lo, hi, Some(shift), b, &self.occupied(members.clone()))?;
                let bases = [(0, lo, &global), (lo, hi, &trees.base), (hi, j, &global)];
                let shifted_totals: Vec<f64> = (0..q).map(|l| totals[l] + a * counts.initial[l] as f64).collect();
                let subjects = members
                    .map(|s| {
                        let mut pi0 = shifted_totals.clone();
                        pi0[self.records[s].initial] -= b;
                        pi0.iter_mut().for_each(|v| *v /= total);
                        let pieces = pieces(&self.stays[s], &bases, &trees, b, j);
                        walk(&self.table, Some(shift), &pieces, &self.cuts, pi0)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((without_cluster, subjects))
            })
            .collect()
    }

    fn cluster_counts(&self, members: std::ops::Range<usize>) -> ClusterCounts {
        let q = self.q;
        let mut lo = usize::MAX;
        let mut hi = 0;
        for s in members.clone() {
            for st in &self.stays[s] {
                lo = lo.min(st.lo);
                hi = hi.max(st.hi);
            }
        }
        if lo >= hi {
            lo = 0;
            hi = 0;
        }
        let len = hi - lo;
        let mut diff = vec![0i64; (len + 1) * q];
        let mut trans = vec![0i64; len * q * q];
        let mut initial = vec![0i64; q];
        for s in members {
            initial[self.records[s].initial] += 1;
            for st in &self.stays[s] {
                diff[(st.lo - lo) * q + st.state] += 1;
                diff[(st.hi - lo) * q + st.state] -= 1;
                if let Some(to) = st.to {
                    trans[((st.hi - 1 - lo) * q + st.state) * q + to] += 1;
                }
            }
        }
        let mut at_risk = vec![0i64; len * q];
        for state in 0..q {
            let mut c = 0;
            for k in 0..len {
                c += diff[k * q + state];
                at_risk[k * q + state] = c;
            }
        }
        ClusterCounts {
            lo,
            hi,
            at_risk,
            trans,
            initial,
        }
    }

    fn walk_cluster_out(&self, global: &FactorTree, shift: ClusterShift<'_>, pi0: Vec<f64>) -> Result<Curve> {
        let q = self.q;
        let j = self.table.len();
        let (lo, hi) = (shift.counts.lo, shift.counts.hi);
        let mut pi = pi0;
        let mut tmp = vec![0.0; q];
        let mut f = vec![0.0; q * q];
        let mut scratch = Scratch::new(q);
        let mut out = Vec::with_capacity(self.cuts.len() * q);
        let mut cur = 0;
        for &cut in &self.cuts {
            while cur < cut {
                if cur < lo || cur >= hi {
                    let end = if cur < lo { lo.min(cut) } else { j.min(cut) };
                    global.apply(cur, end, &mut pi, &mut tmp);
                    cur = end;
                } else {
                    factor(&self.table, cur, Some(shift), None, &mut scratch, &mut f)?;
                    vec_mat(&pi, &f, &mut tmp);
                    std::mem::swap(&mut pi, &mut tmp);
                    cur += 1;
                }
            }
            out.extend_from_slice(&pi);
        }
        Ok(out)
    }
}
