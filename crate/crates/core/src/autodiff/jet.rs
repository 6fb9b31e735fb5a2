use super::tape::{MapPlan, MapTerm, MulPlan, Src, Tape, Tensor, Var};
use super::Tower;
use std::cell::{OnceCell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

/// A downward-closed set of square-free monomials over nilpotent symbols,
/// each monomial a bitmask. Column 0 is always the empty monomial (the value).
#[derive(Debug)]
pub struct Basis {
    key: u64,
    monos: Vec<u32>,
    maxdeg: usize,
    map: OnceCell<Rc<MapPlan>>,
    muls: RefCell<HashMap<(u64, u64), Rc<MulPlan>>>,
    embeds: RefCell<HashMap<u64, Rc<[u16]>>>,
}

thread_local! {
    static BASES: RefCell<(u64, HashMap<Vec<u32>, Rc<Basis>>)> = RefCell::new((0, HashMap::new()));
}

fn partitions(m: u32) -> Vec<Vec<u32>> {
    if m == 0 {
        return vec![vec![]];
    }
    let low = m & m.wrapping_neg();
    let rest = m ^ low;
    let mut out = Vec::new();
    let mut s = rest;
    loop {
        let block = low | s;
        for mut p in partitions(rest ^ s) {
            p.push(block);
            out.push(p);
        }
        if s == 0 {
            break;
        }
        s = (s - 1) & rest;
    }
    out
}

impl Basis {
    /// Interned basis spanned by `monos` (the empty monomial is implied).
    ///
    /// Panics if the set is not downward closed.
    pub fn new(monos: impl IntoIterator<Item = u32>) -> Rc<Basis> {
        let mut v: Vec<u32> = monos.into_iter().chain([0]).collect();
        v.sort_by_key(|&m| (m.count_ones(), m));
        v.dedup();
        for &m in &v {
            let mut bits = m;
            while bits != 0 {
                let b = bits & bits.wrapping_neg();
                assert!(
                    v.contains(&(m ^ b)),
                    "basis is not downward closed at {m:#b}"
                );
                bits ^= b;
            }
        }
        assert!(v.len() < u16::MAX as usize);
        BASES.with(|cell| {
            let mut cell = cell.borrow_mut();
            if let Some(b) = cell.1.get(&v) {
                return b.clone();
            }
            cell.0 += 1;
            let key = cell.0;
            let maxdeg = v.iter().map(|m| m.count_ones() as usize).max().unwrap_or(0);
            assert!(maxdeg <= 4, "jets beyond fourth order are not supported");
            let b = Rc::new(Basis {
                key,
                monos: v.clone(),
                maxdeg,
                map: OnceCell::new(),
                muls: RefCell::new(HashMap::new()),
                embeds: RefCell::new(HashMap::new()),
            });
            cell.1.insert(v, b.clone());
            b
        })
    }

    pub fn len(&self) -> usize {
        self.monos.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn monomials(&self) -> &[u32] {
        &self.monos
    }

    pub fn index(&self, mono: u32) -> Option<usize> {
        self.monos.iter().position(|&m| m == mono)
    }

    fn map_plan(&self) -> Rc<MapPlan> {
        self.map
            .get_or_init(|| {
                let mut terms = Vec::new();
                for (c, &m) in self.monos.iter().enumerate().skip(1) {
                    for p in partitions(m) {
                        let mut blocks = [0u16; 4];
                        for (k, b) in p.iter().enumerate() {
                            blocks[k] = self.index(*b).expect("closed basis") as u16;
                        }
                        terms.push(MapTerm {
                            out: c as u16,
                            n: p.len() as u8,
                            blocks,
                        });
                    }
                }
                Rc::new(MapPlan {
                    group: self.len(),
                    maxdeg: self.maxdeg,
                    terms,
                })
            })
            .clone()
    }

    fn mul_plan(&self, x: &Basis, y: &Basis) -> Rc<MulPlan> {
        self.muls
            .borrow_mut()
            .entry((x.key, y.key))
            .or_insert_with(|| {
                let mut triples = Vec::new();
                for (o, &m) in self.monos.iter().enumerate() {
                    for (a, &ma) in x.monos.iter().enumerate() {
                        if ma & !m != 0 {
                            continue;
                        }
                        if let Some(b) = y.index(m ^ ma) {
                            triples.push((o as u16, a as u16, b as u16));
                        }
                    }
                }
                Rc::new(MulPlan {
                    gx: x.len(),
                    gy: y.len(),
                    go: self.len(),
                    triples,
                })
            })
            .clone()
    }

    fn embed_map(&self, from: &Basis) -> Rc<[u16]> {
        self.embeds
            .borrow_mut()
            .entry(from.key)
            .or_insert_with(|| {
                from.monos
                    .iter()
                    .map(|&m| {
                        self.index(m)
                            .unwrap_or_else(|| panic!("monomial {m:#b} missing from target basis"))
                            as u16
                    })
                    .collect()
            })
            .clone()
    }
}

/// Matrix of truncated Taylor coefficients: `rows` independent scalars for
/// each of `batch` samples, each carrying one column per basis monomial.
///
/// Layout is row-major `rows x (batch * basis.len())` with the sample index
/// outermost within a row.
#[derive(Clone, Debug)]
pub struct Jet<'t> {
    pub data: Tensor<'t>,
    basis: Rc<Basis>,
    batch: usize,
}

impl<'t> Jet<'t> {
    pub fn new(data: Tensor<'t>, basis: Rc<Basis>, batch: usize) -> Self {
        assert_eq!(data.cols(), batch * basis.len(), "jet column count");
        Jet { data, basis, batch }
    }

    /// Builds a jet from per-entry sources; `entry(row, sample, col)`.
    pub fn build(
        tape: &'t Tape,
        basis: &Rc<Basis>,
        rows: usize,
        batch: usize,
        mut entry: impl FnMut(usize, usize, usize) -> Src,
    ) -> Self {
        let c = basis.len();
        let mut src = Vec::with_capacity(rows * batch * c);
        for r in 0..rows {
            for s in 0..batch {
                for k in 0..c {
                    src.push(entry(r, s, k));
                }
            }
        }
        Jet::new(tape.assemble(rows, batch * c, src), basis.clone(), batch)
    }

    pub fn basis(&self) -> &Rc<Basis> {
        &self.basis
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    /// `w · self + b` with the bias entering only the value column.
    pub fn linear(&self, w: Tensor<'t>, b: Option<Tensor<'t>>) -> Self {
        let mut d = w.matmul(self.data);
        if let Some(b) = b {
            d = d.add_col0(b, self.basis.len());
        }
        Jet::new(d, self.basis.clone(), self.batch)
    }

    /// Elementwise composition with a tower function.
    pub fn map(&self, f: Tower) -> Self {
        let plan = self.basis.map_plan();
        let d = self.data.tape().jet_map(self.data, f, plan);
        Jet::new(d, self.basis.clone(), self.batch)
    }

    /// Elementwise product truncated to `out`.
    pub fn mul(&self, o: &Jet<'t>, out: &Rc<Basis>) -> Self {
        assert_eq!(self.batch, o.batch, "jet batch mismatch");
        let plan = out.mul_plan(&self.basis, &o.basis);
        let d = self.data.tape().jet_mul(self.data, o.data, plan);
        Jet::new(d, out.clone(), self.batch)
    }

    /// Re-expresses the jet in a larger basis (new columns are zero).
    pub fn embed(&self, target: &Rc<Basis>) -> Self {
        if Rc::ptr_eq(&self.basis, target) {
            return self.clone();
        }
        let map = target.embed_map(&self.basis);
        let d = self
            .data
            .tape()
            .embed(self.data, map, self.basis.len(), target.len());
        Jet::new(d, target.clone(), self.batch)
    }

    /// Sum; `o` is embedded into this jet's basis first.
    pub fn add(&self, o: &Jet<'t>) -> Self {
        let o = o.embed(&self.basis);
        Jet::new(self.data.add(o.data), self.basis.clone(), self.batch)
    }

    /// Coefficient of `mono` for one row and sample.
    pub fn coeff(&self, row: usize, sample: usize, mono: u32) -> Var<'t> {
        let c = self
            .basis
            .index(mono)
            .unwrap_or_else(|| panic!("monomial {mono:#b} not in basis"));
        let width = self.batch * self.basis.len();
        self.data.at(row * width + sample * self.basis.len() + c)
    }

    /// Plain value of a coefficient.
    pub fn coeff_value(&self, values: &[f64], row: usize, sample: usize, mono: u32) -> f64 {
        let c = self.basis.index(mono).expect("monomial in basis");
        values[row * self.batch * self.basis.len() + sample * self.basis.len() + c]
    }
}
