//! Define-by-run reverse-mode differentiation on a Wengert tape.
//!
//! A [`Tape`] owns every value produced during a forward pass plus an ordered
//! record of executed operations, each carrying a backward closure. Calling
//! [`Tape::backward`] replays the records in exact reverse execution order
//! and accumulates gradients into a separate [`Gradients`] store, so a tape
//! can be differentiated repeatedly and intermediate gradients stay
//! inspectable.
//!
//! Gradient flow is controlled two ways:
//! * [`Var::stop_gradient`] re-enters a value as a fresh constant — a forward
//!   identity that contributes exactly zero to every upstream gradient.
//! * An operation only records a backward closure when at least one input
//!   requires gradient (and recording is enabled), so fully detached
//!   subgraphs cost nothing at backward time.
//!
//! The tape is deliberately dynamic: the aggregation pipeline branches on
//! data (how many slots survive pruning), which a static graph handles
//! poorly. Non-finite outputs are hard errors carrying the op name.

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::Tensor;
use crate::{CoreError, Real, Result};

struct Value<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

type BackwardFn<T> = Box<dyn Fn(&[Value<T>], &[T], &mut GradBuf<T>)>;

struct OpRecord<T> {
    out: usize,
    backward: BackwardFn<T>,
}

struct TapeInner<T> {
    vals: Vec<Value<T>>,
    records: Vec<OpRecord<T>>,
    grad_enabled: bool,
}

/// Gradient accumulators indexed by node id, populated lazily.
struct GradBuf<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> GradBuf<T> {
    /// Zero-initialized accumulator slice for a node.
    fn acc(&mut self, id: usize, len: usize) -> &mut [T] {
        self.grads[id].get_or_insert_with(|| vec![T::zero(); len])
    }
}

/// Result of a backward pass: per-node gradients.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the differentiated scalar w.r.t. `var`, if any path
    /// reached it. `None` means the contribution is exactly zero.
    pub fn get(&self, var: &Var<T>) -> Option<&[T]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor, zeros if no path reached `var`.
    pub fn tensor(&self, var: &Var<T>) -> Tensor<T> {
        match self.get(var) {
            Some(g) => Tensor::from_vec(var.rows, var.cols, g.to_vec())
                .expect("gradient shape matches var"),
            None => Tensor::zeros(var.rows, var.cols),
        }
    }
}

pub struct Tape<T> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

/// Handle to a tape node. Cloning is cheap; the value lives on the tape.
pub struct Var<T> {
    tape: Tape<T>,
    id: usize,
    rows: usize,
    cols: usize,
    requires: bool,
}

impl<T> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("requires", &self.requires)
            .finish()
    }
}

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            id: self.id,
            rows: self.rows,
            cols: self.cols,
            requires: self.requires,
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                vals: Vec::new(),
                records: Vec::new(),
                grad_enabled: true,
            })),
        }
    }

    /// Globally enables or disables recording of backward closures.
    /// Evaluation passes disable recording to skip all backward bookkeeping.
    pub fn set_grad_enabled(&self, enabled: bool) {
        self.inner.borrow_mut().grad_enabled = enabled;
    }

    pub fn grad_enabled(&self) -> bool {
        self.inner.borrow().grad_enabled
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().vals.len()
    }

    pub fn num_records(&self) -> usize {
        self.inner.borrow().records.len()
    }

    /// Enters a value as a differentiable leaf.
    pub fn leaf(&self, value: &Tensor<T>, requires_grad: bool) -> Result<Var<T>> {
        self.push(
            "leaf",
            value.rows(),
            value.cols(),
            value.data().to_vec(),
            requires_grad,
            None,
        )
    }

    /// Enters a value as a constant (never receives gradient).
    pub fn constant(&self, value: &Tensor<T>) -> Result<Var<T>> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: T) -> Result<Var<T>> {
        self.push("leaf", 1, 1, vec![value], false, None)
    }

    fn push(
        &self,
        op: &'static str,
        rows: usize,
        cols: usize,
        data: Vec<T>,
        requires: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Result<Var<T>> {
        debug_assert_eq!(data.len(), rows * cols);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { op });
        }
        let mut inner = self.inner.borrow_mut();
        let requires = requires && inner.grad_enabled;
        let id = inner.vals.len();
        inner.vals.push(Value { rows, cols, data });
        if requires {
            if let Some(backward) = backward {
                inner.records.push(OpRecord { out: id, backward });
            }
        }
        Ok(Var {
            tape: self.clone(),
            id,
            rows,
            cols,
            requires,
        })
    }

    /// Runs reverse-mode accumulation from a scalar node.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.rows * loss.cols != 1 {
            return Err(CoreError::invalid(
                "backward",
                format!("loss must be scalar, got {}x{}", loss.rows, loss.cols),
            ));
        }
        if !Rc::ptr_eq(&self.inner, &loss.tape.inner) {
            return Err(CoreError::TapeMismatch { op: "backward" });
        }
        let inner = self.inner.borrow();
        let mut buf = GradBuf {
            grads: vec![None; inner.vals.len()],
        };
        buf.acc(loss.id, 1)[0] = T::one();
        for record in inner.records.iter().rev() {
            // A node's gradient is final once every consumer (all recorded
            // later) has been replayed, so it can be read out here.
            let gout = match &buf.grads[record.out] {
                Some(g) => g.clone(),
                None => continue,
            };
            (record.backward)(&inner.vals, &gout, &mut buf);
        }
        Ok(Gradients { grads: buf.grads })
    }
}

impl<T: Real> Var<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.requires
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    /// Copies the node's current value off the tape.
    pub fn value(&self) -> Tensor<T> {
        let inner = self.tape.inner.borrow();
        let v = &inner.vals[self.id];
        Tensor::from_vec(v.rows, v.cols, v.data.clone()).expect("tape value is well-formed")
    }

    /// Reads the node's value without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        let inner = self.tape.inner.borrow();
        f(&inner.vals[self.id].data)
    }

    pub fn item(&self) -> T {
        self.with_data(|d| d[0])
    }

    fn same_tape(&self, other: &Var<T>, op: &'static str) -> Result<()> {
        if Rc::ptr_eq(&self.tape.inner, &other.tape.inner) {
            Ok(())
        } else {
            Err(CoreError::TapeMismatch { op })
        }
    }

    fn check_same_shape(&self, other: &Var<T>, op: &'static str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(CoreError::shape(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(())
    }

    /// Forward identity whose backward contribution is exactly zero.
    pub fn stop_gradient(&self) -> Result<Var<T>> {
        let data = self.with_data(|d| d.to_vec());
        self.tape
            .push("stop_gradient", self.rows, self.cols, data, false, None)
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.same_tape(other, "add")?;
        self.check_same_shape(other, "add")?;
        let data = {
            let inner = self.tape.inner.borrow();
            let a = &inner.vals[self.id].data;
            let b = &inner.vals[other.id].data;
            a.iter().zip(b).map(|(&x, &y)| x + y).collect()
        };
        let (aid, bid) = (self.id, other.id);
        self.tape.push(
            "add",
            self.rows,
            self.cols,
            data,
            self.requires || other.requires,
            Some(Box::new(move |_vals, g, buf| {
                for (d, &gv) in buf.acc(aid, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
                for (d, &gv) in buf.acc(bid, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
            })),
        )
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        self.same_tape(other, "sub")?;
        self.check_same_shape(other, "sub")?;
        let data = {
            let inner = self.tape.inner.borrow();
            let a = &inner.vals[self.id].data;
            let b = &inner.vals[other.id].data;
            a.iter().zip(b).map(|(&x, &y)| x - y).collect()
        };
        let (aid, bid) = (self.id, other.id);
        self.tape.push(
            "sub",
            self.rows,
            self.cols,
            data,
            self.requires || other.requires,
            Some(Box::new(move |_vals, g, buf| {
                for (d, &gv) in buf.acc(aid, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
                for (d, &gv) in buf.acc(bid, g.len()).iter_mut().zip(g) {
                    *d -= gv;
                }
            })),
        )
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.same_tape(other, "mul")?;
        self.check_same_shape(other, "mul")?;
        let data = {
            let inner = self.tape.inner.borrow();
            let a = &inner.vals[self.id].data;
            let b = &inner.vals[other.id].data;
            a.iter().zip(b).map(|(&x, &y)| x * y).collect()
        };
        let (aid, bid) = (self.id, other.id);
        self.tape.push(
            "mul",
            self.rows,
            self.cols,
            data,
            self.requires || other.requires,
            Some(Box::new(move |vals, g, buf| {
                {
                    let b = &vals[bid].data;
                    let da = buf.acc(aid, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * b[i];
                    }
                }
                {
                    let a = &vals[aid].data;
                    let db = buf.acc(bid, g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * a[i];
                    }
                }
            })),
        )
    }

    pub fn scale(&self, c: T) -> Result<Var<T>> {
        let data = self.with_data(|d| d.iter().map(|&x| x * c).collect());
        let aid = self.id;
        self.tape.push(
            "scale",
            self.rows,
            self.cols,
            data,
            self.requires,
            Some(Box::new(move |_vals, g, buf| {
                let da = buf.acc(aid, g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * c;
                }
            })),
        )
    }

    pub fn neg(&self) -> Result<Var<T>> {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, c: T) -> Result<Var<T>> {
        let data = self.with_data(|d| d.iter().map(|&x| x + c).collect());
        let aid = self.id;
        self.tape.push(
            "add_scalar",
            self.rows,
            self.cols,
            data,
            self.requires,
            Some(Box::new(move |_vals, g, buf| {
                for (d, &gv) in buf.acc(aid, g.len()).iter_mut().zip(g) {
                    *d += gv;
                }
            })),
        )
    }

    pub fn relu(&self) -> Result<Var<T>> {
        let data = self.with_data(|d| {
            d.iter()
                .map(|&x| if x > T::zero() { x } else { T::zero() })
                .collect()
        });
        let aid = self.id;
        self.tape.push(
            "relu",
            self.rows,
            self.cols,
            data,
            self.requires,
            Some(Box::new(move |vals, g, buf| {
                let x = &vals[aid].data;
                let da = buf.acc(aid, g.len());
                for i in 0..g.len() {
                    if x[i] > T::zero() {
                        da[i] += g[i];
                    }
                }
            })),
        )
    }

    pub fn sigmoid(&self) -> Result<Var<T>> {
        let data: Vec<T> = self.with_data(|d| {
            d.iter()
                .map(|&x| T::one() / (T::one() + (-x).exp()))
                .collect()
        });
        let aid = self.id;
        let out = self.tape.push(
            "sigmoid",
            self.rows,
            self.cols,
            data,
            self.requires,
            None,
        )?;
        self.attach_unary_from_output(out, aid, |y| y * (T::one() - y))
    }

    pub fn tanh_act(&self) -> Result<Var<T>> {
        let data: Vec<T> = self.with_data(|d| d.iter().map(|&x| x.tanh()).collect());
        let aid = self.id;
        let out = self
            .tape
            .push("tanh", self.rows, self.cols, data, self.requires, None)?;
        self.attach_unary_from_output(out, aid, |y| T::one() - y * y)
    }

    pub fn exp(&self) -> Result<Var<T>> {
        let data: Vec<T> = self.with_data(|d| d.iter().map(|&x| x.exp()).collect());
        let aid = self.id;
        let out = self
            .tape
            .push("exp", self.rows, self.cols, data, self.requires, None)?;
        self.attach_unary_from_output(out, aid, |y| y)
    }

    pub fn recip(&self) -> Result<Var<T>> {
        let data: Vec<T> = self.with_data(|d| d.iter().map(|&x| T::one() / x).collect());
        let aid = self.id;
        let out = self
            .tape
            .push("recip", self.rows, self.cols, data, self.requires, None)?;
        self.attach_unary_from_output(out, aid, |y| -(y * y))
    }

    /// Attaches a backward record for a unary op whose local derivative is a
    /// function of the already-stored output value.
    fn attach_unary_from_output(
        &self,
        plain: Var<T>,
        aid: usize,
        dydx_from_y: impl Fn(T) -> T + 'static,
    ) -> Result<Var<T>> {
        if !plain.requires {
            return Ok(plain);
        }
        let out_id = plain.id;
        let mut inner = self.tape.inner.borrow_mut();
        inner.records.push(OpRecord {
            out: out_id,
            backward: Box::new(move |vals, g, buf| {
                let y = &vals[out_id].data;
                let da = buf.acc(aid, g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * dydx_from_y(y[i]);
                }
            }),
        });
        drop(inner);
        Ok(plain)
    }

    // ---- linear algebra --------------------------------------------------

    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.same_tape(other, "matmul")?;
        if self.cols != other.rows {
            return Err(CoreError::shape(
                "matmul",
                format!(
                    "{}x{} . {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let data = {
            let inner = self.tape.inner.borrow();
            let a = &inner.vals[self.id].data;
            let b = &inner.vals[other.id].data;
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                for l in 0..k {
                    let av = a[i * k + l];
                    let brow = &b[l * n..(l + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += av * brow[j];
                    }
                }
            }
            out
        };
        let (aid, bid) = (self.id, other.id);
        self.tape.push(
            "matmul",
            m,
            n,
            data,
            self.requires || other.requires,
            Some(Box::new(move |vals, g, buf| {
                {
                    // dA = G . B^T
                    let b = &vals[bid].data;
                    let da = buf.acc(aid, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            let brow = &b[l * n..(l + 1) * n];
                            let mut acc = T::zero();
                            for j in 0..n {
                                acc += grow[j] * brow[j];
                            }
                            da[i * k + l] += acc;
                        }
                    }
                }
                {
                    // dB = A^T . G
                    let a = &vals[aid].data;
                    let db = buf.acc(bid, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            let av = a[i * k + l];
                            let drow = &mut db[l * n..(l + 1) * n];
                            for j in 0..n {
                                drow[j] += av * grow[j];
                            }
                        }
                    }
                }
            })),
        )
    }

    pub fn transpose(&self) -> Result<Var<T>> {
        let (r, c) = (self.rows, self.cols);
        let data = self.with_data(|d| {
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            out
        });
        let aid = self.id;
        self.tape.push(
            "transpose",
            c,
            r,
            data,
            self.requires,
            Some(Box::new(move |_vals, g, buf| {
                let da = buf.acc(aid, r * c);
                for j in 0..c {
                    for i in 0..r {
                        da[i * c + j] += g[j * r + i];
                    }
                }
            })),
        )
    }

    // ---- reductions and broadcasts ----------------------------------------

    /// Sums each column: `r x c -> 1 x c`.
    pub fn col_sums(&self) -> Result<Var<T>> {
        let (r, c) = (self.rows, self.cols);
        let data = self.with_data(|d| {
            let mut out = vec![T::zero(); c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += d[i * c + j];
                }
            }
            out
        });
        let aid = self.id;
        self.tape.push(
            "col_sums",
            1,
            c,
            data,
            self.requires,
            Some(Box::new(move |_vals, g, buf| {
                let da = buf.acc(aid, r * c);
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] += g[j];
                    }
                }
            })),
        )
    }

    pub fn sum_all(&self) -> Result<Var<T>> {
        let total = self.with_data(|d| d.iter().fold(T::zero(), |a, &b| a + b));
        let aid = self.id;
        let n = self.len();
        self.tape.push(
            "sum_all",
            1,
            1,
            vec![total],
            self.requires,
            Some(Box::new(move |_vals, g, buf| {
                let da = buf.acc(aid, n);
                for d in da.iter_mut() {
                    *d += g[0];
                }
            })),
        )
    }

    pub fn mean_all(&self) -> Result<Var<T>> {
        let n = self.len();
        let inv = T::one() / T::from_usize(n).expect("tensor length fits scalar");
        let total = self.with_data(|d| d.iter().fold(T::zero(), |a, &b| a + b) * inv);
        let aid = self.id;
        self.tape.push(
            "mean_all",
            1,
            1,
            vec![total],
            self.requires,
            Some(Box::new(move |_vals, g, buf| {
                let da = buf.acc(aid, n);
                let gv = g[0] * inv;
                for d in da.iter_mut() {
                    *d += gv;
                }
            })),
        )
    }

    /// Adds a `1 x c` row vector to every row.
    pub fn add_rowvec(&self, row: &Var<T>) -> Result<Var<T>> {
        self.same_tape(row, "add_rowvec")?;
        if row.rows != 1 || row.cols != self.cols {
            return Err(CoreError::shape(
                "add_rowvec",
                format!("{}x{} + {}x{}", self.rows, self.cols, row.rows, row.cols),
            ));
        }
        let (r, c) = (self.rows, self.cols);
        let data = {
            let inner = self.tape.inner.borrow();
            let a = &inner.vals[self.id].data;
            let v = &inner.vals[row.id].data;
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(a[i * c + j] + v[j]);
                }
            }
            out
        };
        let (aid, vid) = (self.id, row.id);
        self.tape.push(
            "add_rowvec",
            r,
            c,
            data,
            self.requires || row.requires,
            Some(Box::new(move |_vals, g, buf| {
                {
                    let da = buf.acc(aid, r * c);
                    for i in 0..r * c {
                        da[i] += g[i];
                    }
                }
                {
                    let dv = buf.acc(vid, c);
                    for i in 0..r {
                        for j in 0..c {
                            dv[j] += g[i * c + j];
                        }
                    }
                }
            })),
        )
    }

    /// Scales column `j` of every row by `row[j]` (`1 x c` broadcast).
    pub fn mul_rowvec(&self, row: &Var<T>) -> Result<Var<T>> {
        self.same_tape(row, "mul_rowvec")?;
        if row.rows != 1 || row.cols != self.cols {
            return Err(CoreError::shape(
                "mul_rowvec",
                format!("{}x{} * {}x{}", self.rows, self.cols, row.rows, row.cols),
            ));
        }
        let (r, c) = (self.rows, self.cols);
        let data = {
            let inner = self.tape.inner.borrow();
            let a = &inner.vals[self.id].data;
            let v = &inner.vals[row.id].data;
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(a[i * c + j] * v[j]);
                }
            }
            out
        };
        let (aid, vid) = (self.id, row.id);
        self.tape.push(
            "mul_rowvec",
            r,
            c,
            data,
            self.requires || row.requires,
            Some(Box::new(move |vals, g, buf| {
                {
                    let v = &vals[vid].data;
                    let da = buf.acc(aid, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[i * c + j] * v[j];
                        }
                    }
                }
                {
                    let a = &vals[aid].data;
                    let dv = buf.acc(vid, c);
                    for i in 0..r {
                        for j in 0..c {
                            dv[j] += g[i * c + j] * a[i * c + j];
                        }
                    }
                }
            })),
        )
    }

    /// Scales row `i` by `col[i]` (`r x 1` broadcast).
    pub fn mul_colvec(&self, col: &Var<T>) -> Result<Var<T>> {
        self.same_tape(col, "mul_colvec")?;
        if col.cols != 1 || col.rows != self.rows {
            return Err(CoreError::shape(
                "mul_colvec",
                format!("{}x{} * {}x{}", self.rows, self.cols, col.rows, col.cols),
            ));
        }
        let (r, c) = (self.rows, self.cols);
        let data = {
            let inner = self.tape.inner.borrow();
            let a = &inner.vals[self.id].data;
            let v = &inner.vals[col.id].data;
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(a[i * c + j] * v[i]);
                }
            }
            out
        };
        let (aid, vid) = (self.id, col.id);
        self.tape.push(
            "mul_colvec",
            r,
            c,
            data,
            self.requires || col.requires,
            Some(Box::new(move |vals, g, buf| {
                {
                    let v = &vals[vid].data;
                    let da = buf.acc(aid, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[i * c + j] * v[i];
                        }
                    }
                }
                {
                    let a = &vals[aid].data;
                    let dv = buf.acc(vid, r);
                    for i in 0..r {
                        let mut acc = T::zero();
                        for j in 0..c {
                            acc += g[i * c + j] * a[i * c + j];
                        }
                        dv[i] += acc;
                    }
                }
            })),
        )
    }

    /// Extracts rows in the given order (duplicates allowed).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<T>> {
        if indices.is_empty() {
            return Err(CoreError::invalid("gather_rows", "empty index list"));
        }
        for &i in indices {
            if i >= self.rows {
                return Err(CoreError::invalid(
                    "gather_rows",
                    format!("row {i} out of {}", self.rows),
                ));
            }
        }
        let c = self.cols;
        let data = self.with_data(|d| {
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                out.extend_from_slice(&d[i * c..(i + 1) * c]);
            }
            out
        });
        let aid = self.id;
        let src_rows = self.rows;
        let idx: Vec<usize> = indices.to_vec();
        self.tape.push(
            "gather_rows",
            indices.len(),
            c,
            data,
            self.requires,
            Some(Box::new(move |_vals, g, buf| {
                let da = buf.acc(aid, src_rows * c);
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        da[i * c + j] += g[k * c + j];
                    }
                }
            })),
        )
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_row(&self, n: usize) -> Result<Var<T>> {
        if self.rows != 1 {
            return Err(CoreError::shape(
                "broadcast_row",
                format!("expected 1 x c, got {}x{}", self.rows, self.cols),
            ));
        }
        if n == 0 {
            return Err(CoreError::invalid("broadcast_row", "n must be >= 1"));
        }
        let c = self.cols;
        let data = self.with_data(|d| {
            let mut out = Vec::with_capacity(n * c);
            for _ in 0..n {
                out.extend_from_slice(d);
            }
            out
        });
        let aid = self.id;
        self.tape.push(
            "broadcast_row",
            n,
            c,
            data,
            self.requires,
            Some(Box::new(move |_vals, g, buf| {
                let da = buf.acc(aid, c);
                for i in 0..n {
                    for j in 0..c {
                        da[j] += g[i * c + j];
                    }
                }
            })),
        )
    }

    /// Columns `[from, to)`.
    pub fn slice_cols(&self, from: usize, to: usize) -> Result<Var<T>> {
        if from >= to || to > self.cols {
            return Err(CoreError::invalid(
                "slice_cols",
                format!("range {from}..{to} of {} cols", self.cols),
            ));
        }
        let (r, c) = (self.rows, self.cols);
        let w = to - from;
        let data = self.with_data(|d| {
            let mut out = Vec::with_capacity(r * w);
            for i in 0..r {
                out.extend_from_slice(&d[i * c + from..i * c + to]);
            }
            out
        });
        let aid = self.id;
        self.tape.push(
            "slice_cols",
            r,
            w,
            data,
            self.requires,
            Some(Box::new(move |_vals, g, buf| {
                let da = buf.acc(aid, r * c);
                for i in 0..r {
                    for j in 0..w {
                        da[i * c + from + j] += g[i * w + j];
                    }
                }
            })),
        )
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| CoreError::invalid("concat_cols", "no inputs"))?;
        let r = first.rows;
        let mut total = 0;
        for p in parts {
            first.same_tape(p, "concat_cols")?;
            if p.rows != r {
                return Err(CoreError::shape("concat_cols", "row counts differ"));
            }
            total += p.cols;
        }
        let data = {
            let inner = first.tape.inner.borrow();
            let mut out = Vec::with_capacity(r * total);
            for i in 0..r {
                for p in parts {
                    let d = &inner.vals[p.id].data;
                    out.extend_from_slice(&d[i * p.cols..(i + 1) * p.cols]);
                }
            }
            out
        };
        let requires = parts.iter().any(|p| p.requires);
        let meta: Vec<(usize, usize)> = parts.iter().map(|p| (p.id, p.cols)).collect();
        first.tape.push(
            "concat_cols",
            r,
            total,
            data,
            requires,
            Some(Box::new(move |_vals, g, buf| {
                let mut offset = 0;
                for &(pid, w) in &meta {
                    let dp = buf.acc(pid, r * w);
                    for i in 0..r {
                        for j in 0..w {
                            dp[i * w + j] += g[i * total + offset + j];
                        }
                    }
                    offset += w;
                }
            })),
        )
    }

    /// Row-wise select: rows where `mask[i]` holds come from `on_true`,
    /// the rest from `on_false`. Gradient routes the same way.
    pub fn select_rows(mask: &[bool], on_true: &Var<T>, on_false: &Var<T>) -> Result<Var<T>> {
        on_true.same_tape(on_false, "select_rows")?;
        on_true.check_same_shape(on_false, "select_rows")?;
        if mask.len() != on_true.rows {
            return Err(CoreError::shape(
                "select_rows",
                format!("mask length {} vs {} rows", mask.len(), on_true.rows),
            ));
        }
        let (r, c) = (on_true.rows, on_true.cols);
        let data = {
            let inner = on_true.tape.inner.borrow();
            let a = &inner.vals[on_true.id].data;
            let b = &inner.vals[on_false.id].data;
            let mut out = Vec::with_capacity(r * c);
            for (i, &keep) in mask.iter().enumerate() {
                let src = if keep { a } else { b };
                out.extend_from_slice(&src[i * c..(i + 1) * c]);
            }
            out
        };
        let (aid, bid) = (on_true.id, on_false.id);
        let mask: Vec<bool> = mask.to_vec();
        on_true.tape.push(
            "select_rows",
            r,
            c,
            data,
            on_true.requires || on_false.requires,
            Some(Box::new(move |_vals, g, buf| {
                {
                    let da = buf.acc(aid, r * c);
                    for (i, &keep) in mask.iter().enumerate() {
                        if keep {
                            for j in 0..c {
                                da[i * c + j] += g[i * c + j];
                            }
                        }
                    }
                }
                {
                    let db = buf.acc(bid, r * c);
                    for (i, &keep) in mask.iter().enumerate() {
                        if !keep {
                            for j in 0..c {
                                db[i * c + j] += g[i * c + j];
                            }
                        }
                    }
                }
            })),
        )
    }

    // ---- normalizations ---------------------------------------------------

    /// Softmax along an axis of a matrix: `axis = 1` normalizes each row,
    /// `axis = 0` each column. Stabilized by max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Var<T>> {
        match axis {
            1 => self.softmax_rows_masked(None),
            0 => {
                let t = self.transpose()?;
                let s = t.softmax_rows_masked(None)?;
                s.transpose()
            }
            _ => Err(CoreError::invalid(
                "softmax",
                format!("axis {axis} out of range for rank-2 tensor"),
            )),
        }
    }

    /// Row-wise softmax restricted to the columns where `mask` holds; masked
    /// columns are exactly zero and retained columns sum to one per row.
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Var<T>> {
        if mask.len() != self.cols {
            return Err(CoreError::shape(
                "masked_softmax",
                format!("mask length {} vs {} cols", mask.len(), self.cols),
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(CoreError::invalid("masked_softmax", "all columns masked"));
        }
        self.softmax_rows_masked(Some(mask.to_vec()))
    }

    fn softmax_rows_masked(&self, mask: Option<Vec<bool>>) -> Result<Var<T>> {
        let (r, c) = (self.rows, self.cols);
        let retain = |j: usize, m: &Option<Vec<bool>>| m.as_ref().map_or(true, |m| m[j]);
        let data = self.with_data(|d| {
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                let row = &d[i * c..(i + 1) * c];
                let mut max = T::neg_infinity();
                for j in 0..c {
                    if retain(j, &mask) && row[j] > max {
                        max = row[j];
                    }
                }
                let mut total = T::zero();
                for j in 0..c {
                    if retain(j, &mask) {
                        let e = (row[j] - max).exp();
                        out[i * c + j] = e;
                        total += e;
                    }
                }
                for j in 0..c {
                    if retain(j, &mask) {
                        out[i * c + j] /= total;
                    }
                }
            }
            out
        });
        let aid = self.id;
        let op = if mask.is_some() {
            "masked_softmax"
        } else {
            "softmax"
        };
        let out = self.tape.push(op, r, c, data, self.requires, None)?;
        if !out.requires {
            return Ok(out);
        }
        let out_id = out.id;
        let mut inner = self.tape.inner.borrow_mut();
        inner.records.push(OpRecord {
            out: out_id,
            backward: Box::new(move |vals, g, buf| {
                let y = &vals[out_id].data;
                let da = buf.acc(aid, r * c);
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let mut dot = T::zero();
                    for j in 0..c {
                        if retain(j, &mask) {
                            dot += gr[j] * yr[j];
                        }
                    }
                    for j in 0..c {
                        if retain(j, &mask) {
                            da[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }),
        });
        drop(inner);
        Ok(out)
    }

    /// Row-wise layer normalization followed by a learned affine map:
    /// each row is shifted to zero mean and scaled to unit variance, then
    /// multiplied by `gamma` and shifted by `beta` (both `1 x c`).
    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
        self.same_tape(gamma, "layer_norm")?;
        self.same_tape(beta, "layer_norm")?;
        if gamma.rows != 1 || gamma.cols != self.cols || beta.rows != 1 || beta.cols != self.cols {
            return Err(CoreError::shape(
                "layer_norm",
                format!(
                    "affine params must be 1x{}, got {}x{} and {}x{}",
                    self.cols, gamma.rows, gamma.cols, beta.rows, beta.cols
                ),
            ));
        }
        let (r, c) = (self.rows, self.cols);
        let eps = crate::real::<T>(1e-5);
        let inv_c = T::one() / T::from_usize(c).expect("row length fits scalar");
        let data = {
            let inner = self.tape.inner.borrow();
            let x = &inner.vals[self.id].data;
            let ga = &inner.vals[gamma.id].data;
            let be = &inner.vals[beta.id].data;
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                let row = &x[i * c..(i + 1) * c];
                let mean = row.iter().fold(T::zero(), |a, &b| a + b) * inv_c;
                let var = row
                    .iter()
                    .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
                    * inv_c;
                let inv_std = T::one() / (var + eps).sqrt();
                for j in 0..c {
                    let norm = (row[j] - mean) * inv_std;
                    out[i * c + j] = norm * ga[j] + be[j];
                }
            }
            out
        };
        let (xid, gid, bid) = (self.id, gamma.id, beta.id);
        self.tape.push(
            "layer_norm",
            r,
            c,
            data,
            self.requires || gamma.requires || beta.requires,
            Some(Box::new(move |vals, g, buf| {
                let x = &vals[xid].data;
                let ga = &vals[gid].data;
                // recompute per-row statistics; rows are short
                let mut norms = vec![T::zero(); r * c];
                let mut inv_stds = vec![T::zero(); r];
                for i in 0..r {
                    let row = &x[i * c..(i + 1) * c];
                    let mean = row.iter().fold(T::zero(), |a, &b| a + b) * inv_c;
                    let var = row
                        .iter()
                        .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
                        * inv_c;
                    let inv_std = T::one() / (var + eps).sqrt();
                    inv_stds[i] = inv_std;
                    for j in 0..c {
                        norms[i * c + j] = (row[j] - mean) * inv_std;
                    }
                }
                {
                    let dx = buf.acc(xid, r * c);
                    for i in 0..r {
                        let gr = &g[i * c..(i + 1) * c];
                        let nr = &norms[i * c..(i + 1) * c];
                        let mut mean_gy = T::zero();
                        let mut mean_gyn = T::zero();
                        for j in 0..c {
                            let gy = gr[j] * ga[j];
                            mean_gy += gy;
                            mean_gyn += gy * nr[j];
                        }
                        mean_gy = mean_gy * inv_c;
                        mean_gyn = mean_gyn * inv_c;
                        for j in 0..c {
                            let gy = gr[j] * ga[j];
                            dx[i * c + j] += (gy - mean_gy - nr[j] * mean_gyn) * inv_stds[i];
                        }
                    }
                }
                {
                    let dg = buf.acc(gid, c);
                    for i in 0..r {
                        for j in 0..c {
                            dg[j] += g[i * c + j] * norms[i * c + j];
                        }
                    }
                }
                {
                    let db = buf.acc(bid, c);
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += g[i * c + j];
                        }
                    }
                }
            })),
        )
    }
}

/// Affine map `x . w + b` with `b` broadcast across rows.
pub fn linear<T: Real>(x: &Var<T>, w: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    x.matmul(w)?.add_rowvec(b)
}

/// Two-layer perceptron with ReLU: `relu(x . w1 + b1) . w2 + b2`.
pub fn mlp<T: Real>(
    x: &Var<T>,
    w1: &Var<T>,
    b1: &Var<T>,
    w2: &Var<T>,
    b2: &Var<T>,
) -> Result<Var<T>> {
    linear(&linear(x, w1, b1)?.relu()?, w2, b2)
}

/// Mean squared error between two same-shape vars.
pub fn mse<T: Real>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let diff = a.sub(b)?;
    diff.mul(&diff)?.mean_all()
}

/// Names of the differentiable operations the tape implements. The gradient
/// check registry asserts coverage against this list.
pub const DIFFERENTIABLE_OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "recip",
    "matmul",
    "transpose",
    "col_sums",
    "sum_all",
    "mean_all",
    "add_rowvec",
    "mul_rowvec",
    "mul_colvec",
    "gather_rows",
    "broadcast_row",
    "slice_cols",
    "concat_cols",
    "select_rows",
    "softmax",
    "masked_softmax",
    "layer_norm",
];
