//! Dense row-major f64 tensors and the math kernels shared by the
//! autodiff tape and the inference-only forward paths.

use crate::error::{IclError, Result};

/// Row-major dense tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(IclError::shape(
                "new",
                format!("shape {:?} needs {} values, got {}", shape, count, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let count = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; count],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Interpret as a 2-d matrix, or fail naming the op.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(IclError::shape(
                op,
                format!("expected 2-d tensor, got shape {:?}", other),
            )),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = match self.shape.as_slice() {
            [_, c] => (0, *c),
            _ => panic!("row() on non-matrix"),
        };
        &self.data[i * c..(i + 1) * c]
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(IclError::NonFinite { op })
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(IclError::shape(
            op,
            format!("{:?} vs {:?}", a.shape, b.shape),
        ));
    }
    Ok(())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(IclError::shape(
            "matmul",
            format!("{}x{} * {}x{}", m, k, k2, n),
        ));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            let b_row = &b.data[kk * n..(kk + 1) * n];
            for j in 0..n {
                o_row[j] += a_ik * b_row[j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Add a row vector to every row of a matrix.
pub fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2("add_row")?;
    if row.len() != n {
        return Err(IclError::shape(
            "add_row",
            format!("matrix {}x{} + row of {}", m, n, row.len()),
        ));
    }
    let mut data = a.data.clone();
    for i in 0..m {
        for j in 0..n {
            data[i * n + j] += row.data[j];
        }
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn scale(a: &Tensor, k: f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x * k).collect(),
    }
}

pub fn tanh(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x.tanh()).collect(),
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
    }
}

pub fn log(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x.ln()).collect(),
    }
}

pub fn softmax_rows(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2("softmax_rows")?;
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let row = &a.data[i * n..(i + 1) * n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut data[i * n..(i + 1) * n];
        let mut sum = 0.0;
        for j in 0..n {
            let e = (row[j] - max).exp();
            out[j] = e;
            sum += e;
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(vec![m, n], data)
}

pub fn log_softmax_rows(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2("log_softmax_rows")?;
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        let row = &a.data[i * n..(i + 1) * n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        let out = &mut data[i * n..(i + 1) * n];
        for j in 0..n {
            out[j] = row[j] - lse;
        }
    }
    Tensor::new(vec![m, n], data)
}

/// Concatenate matrices with equal row counts along the column axis.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(IclError::shape("concat", "no inputs".to_string()));
    }
    let (m, _) = parts[0].dims2("concat")?;
    let mut widths = Vec::with_capacity(parts.len());
    let mut total = 0;
    for p in parts {
        let (r, c) = p.dims2("concat")?;
        if r != m {
            return Err(IclError::shape(
                "concat",
                format!("row counts differ: {} vs {}", m, r),
            ));
        }
        widths.push(c);
        total += c;
    }
    let mut data = vec![0.0; m * total];
    for i in 0..m {
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            data[i * total + off..i * total + off + w].copy_from_slice(p.row(i));
            off += w;
        }
    }
    Tensor::new(vec![m, total], data)
}

/// Column slice `[start, end)` of a matrix.
pub fn slice_cols(a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (m, n) = a.dims2("slice")?;
    if start > end || end > n {
        return Err(IclError::shape(
            "slice",
            format!("cols {}..{} of {}x{}", start, end, m, n),
        ));
    }
    let w = end - start;
    let mut data = vec![0.0; m * w];
    for i in 0..m {
        data[i * w..(i + 1) * w].copy_from_slice(&a.row(i)[start..end]);
    }
    Tensor::new(vec![m, w], data)
}

/// Gather rows of an embedding table by token id.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (v, d) = table.dims2("embedding_lookup")?;
    let mut data = vec![0.0; ids.len() * d];
    for (i, &id) in ids.iter().enumerate() {
        if id >= v {
            return Err(IclError::shape(
                "embedding_lookup",
                format!("id {} out of range for table of {}", id, v),
            ));
        }
        data[i * d..(i + 1) * d].copy_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), d], data)
}

/// For each row i of a matrix, select column `ids[i]`, giving a vector.
pub fn pick_per_row(a: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (m, n) = a.dims2("pick_per_row")?;
    if ids.len() != m {
        return Err(IclError::shape(
            "pick_per_row",
            format!("{} rows vs {} ids", m, ids.len()),
        ));
    }
    let mut data = vec![0.0; m];
    for (i, &id) in ids.iter().enumerate() {
        if id >= n {
            return Err(IclError::shape(
                "pick_per_row",
                format!("column {} out of range for width {}", id, n),
            ));
        }
        data[i] = a.data[i * n + id];
    }
    Ok(Tensor::vector(data))
}

/// Dot products between a query matrix `[b, h]` and `t` stacked key blocks
/// `[b, t*h]`, one score per block per row: output `[b, t]`.
pub fn attn_scores(query: &Tensor, keys: &Tensor, t: usize) -> Result<Tensor> {
    let (b, h) = query.dims2("attn_scores")?;
    let (b2, th) = keys.dims2("attn_scores")?;
    if b != b2 || th != t * h {
        return Err(IclError::shape(
            "attn_scores",
            format!("query {}x{}, keys {}x{}, t={}", b, h, b2, th, t),
        ));
    }
    let mut data = vec![0.0; b * t];
    for i in 0..b {
        let q = query.row(i);
        let k = keys.row(i);
        for s in 0..t {
            let block = &k[s * h..(s + 1) * h];
            let mut dot = 0.0;
            for j in 0..h {
                dot += q[j] * block[j];
            }
            data[i * t + s] = dot;
        }
    }
    Tensor::new(vec![b, t], data)
}

/// Weighted sum of `t` stacked value blocks `[b, t*h]` with weights `[b, t]`:
/// output `[b, h]`.
pub fn attn_context(weights: &Tensor, values: &Tensor, t: usize) -> Result<Tensor> {
    let (b, t2) = weights.dims2("attn_context")?;
    let (b2, th) = values.dims2("attn_context")?;
    if b != b2 || t != t2 || th % t != 0 {
        return Err(IclError::shape(
            "attn_context",
            format!("weights {}x{}, values {}x{}, t={}", b, t2, b2, th, t),
        ));
    }
    let h = th / t;
    let mut data = vec![0.0; b * h];
    for i in 0..b {
        let w = weights.row(i);
        let v = values.row(i);
        let out = &mut data[i * h..(i + 1) * h];
        for s in 0..t {
            let block = &v[s * h..(s + 1) * h];
            let ws = w[s];
            for j in 0..h {
                out[j] += ws * block[j];
            }
        }
    }
    Tensor::new(vec![b, h], data)
}

pub fn sum_all(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}
