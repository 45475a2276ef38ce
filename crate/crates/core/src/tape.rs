//! Reverse-mode automatic differentiation over scalars.
//!
//! Every node stores its value and a list of `(parent, ∂node/∂parent)` edges.
//! Fused nodes (dot products, log-sum-exp, cosine distance) keep the edge
//! count close to the number of multiply-adds in the forward pass. Edges live
//! in flat arrays so a backward sweep is a single linear scan.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<f64>,
    edge_end: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.values.clear();
        self.edge_end.clear();
        self.parents.clear();
        self.partials.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.len()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    pub fn values(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|&v| self.value(v)).collect()
    }

    fn finish(&mut self, value: f64) -> Var {
        let id = self.values.len() as u32;
        self.values.push(value);
        self.edge_end.push(self.parents.len() as u32);
        Var(id)
    }

    #[inline]
    fn edge(&mut self, parent: Var, partial: f64) {
        self.parents.push(parent.0);
        self.partials.push(partial);
    }

    /// A leaf: either a parameter or a constant input.
    pub fn leaf(&mut self, value: f64) -> Var {
        self.finish(value)
    }

    pub fn leaves(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.edge(a, 1.0);
        self.edge(b, 1.0);
        self.finish(v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.edge(a, 1.0);
        self.edge(b, -1.0);
        self.finish(v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.edge(a, y);
        self.edge(b, x);
        self.finish(x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.edge(a, c);
        self.finish(v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.edge(a, 1.0);
        self.finish(v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).tanh();
        self.edge(a, 1.0 - t * t);
        self.finish(t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let e = self.value(a).exp();
        self.edge(a, e);
        self.finish(e)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.edge(a, 1.0 / x);
        self.finish(x.ln())
    }

    /// |a|, with derivative 0 at the kink.
    pub fn abs(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let d = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.edge(a, d);
        self.finish(x.abs())
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let mut v = 0.0;
        for &x in xs {
            v += self.value(x);
            self.edge(x, 1.0);
        }
        self.finish(v)
    }

    /// Σ cᵢ xᵢ with constant coefficients.
    pub fn weighted_sum(&mut self, xs: &[Var], coeffs: &[f64]) -> Var {
        debug_assert_eq!(xs.len(), coeffs.len());
        let mut v = 0.0;
        for (&x, &c) in xs.iter().zip(coeffs) {
            v += c * self.value(x);
            self.edge(x, c);
        }
        self.finish(v)
    }

    pub fn mean(&mut self, xs: &[Var]) -> Var {
        let c = 1.0 / xs.len() as f64;
        let mut v = 0.0;
        for &x in xs {
            v += c * self.value(x);
            self.edge(x, c);
        }
        self.finish(v)
    }

    /// w·x + b (bias optional).
    pub fn affine(&mut self, w: &[Var], x: &[Var], b: Option<Var>) -> Var {
        debug_assert_eq!(w.len(), x.len());
        let mut v = 0.0;
        for (&wi, &xi) in w.iter().zip(x) {
            let (a, c) = (self.value(wi), self.value(xi));
            v += a * c;
            self.edge(wi, c);
            self.edge(xi, a);
        }
        if let Some(b) = b {
            v += self.value(b);
            self.edge(b, 1.0);
        }
        self.finish(v)
    }

    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        self.affine(a, b, None)
    }

    /// Row-major `rows × x.len()` matrix times `x`, plus optional bias.
    pub fn matvec(&mut self, w: &[Var], x: &[Var], bias: Option<&[Var]>) -> Vec<Var> {
        let cols = x.len();
        let rows = w.len() / cols;
        debug_assert_eq!(rows * cols, w.len());
        (0..rows)
            .map(|r| self.affine(&w[r * cols..(r + 1) * cols], x, bias.map(|b| b[r])))
            .collect()
    }

    pub fn tanh_vec(&mut self, xs: &[Var]) -> Vec<Var> {
        xs.iter().map(|&x| self.tanh(x)).collect()
    }

    pub fn mul_vec(&mut self, a: &[Var], b: &[Var]) -> Vec<Var> {
        a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect()
    }

    /// log Σ exp(xᵢ), stabilised by max subtraction.
    pub fn logsumexp(&mut self, xs: &[Var]) -> Var {
        let vals: Vec<f64> = xs.iter().map(|&x| self.value(x)).collect();
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = vals.iter().map(|v| (v - m).exp()).sum();
        let lse = m + z.ln();
        for (&x, v) in xs.iter().zip(&vals) {
            self.edge(x, (v - lse).exp());
        }
        self.finish(lse)
    }

    pub fn softmax(&mut self, xs: &[Var]) -> Vec<Var> {
        let p = softmax(&self.values(xs));
        (0..xs.len())
            .map(|i| {
                for (j, &x) in xs.iter().enumerate() {
                    let d = if i == j { p[i] * (1.0 - p[i]) } else { -p[i] * p[j] };
                    self.edge(x, d);
                }
                self.finish(p[i])
            })
            .collect()
    }

    /// Σ αᵢ vᵢ for scalar weights α and equal-length vectors vᵢ.
    pub fn combine(&mut self, weights: &[Var], vectors: &[&[Var]]) -> Vec<Var> {
        let dim = vectors[0].len();
        (0..dim)
            .map(|k| {
                let mut v = 0.0;
                for (&a, vec) in weights.iter().zip(vectors) {
                    let (av, xv) = (self.value(a), self.value(vec[k]));
                    v += av * xv;
                    self.edge(a, xv);
                    self.edge(vec[k], av);
                }
                self.finish(v)
            })
            .collect()
    }

    /// 1 − cos(u, v). A zero-norm argument yields distance 1 and no gradient;
    /// the returned flag reports that degenerate case.
    pub fn cosine_distance(&mut self, u: &[Var], v: &[Var]) -> (Var, bool) {
        let uv = self.values(u);
        let vv = self.values(v);
        let nu = norm(&uv);
        let nv = norm(&vv);
        if nu == 0.0 || nv == 0.0 {
            return (self.finish(1.0), true);
        }
        let d: f64 = uv.iter().zip(&vv).map(|(a, b)| a * b).sum();
        let cos = d / (nu * nv);
        for (k, &x) in u.iter().enumerate() {
            self.edge(x, -(vv[k] / (nu * nv) - cos * uv[k] / (nu * nu)));
        }
        for (k, &x) in v.iter().enumerate() {
            self.edge(x, -(uv[k] / (nu * nv) - cos * vv[k] / (nv * nv)));
        }
        (self.finish(1.0 - cos), false)
    }

    /// Adjoints of every node with respect to `output`.
    pub fn backward(&self, output: Var) -> Vec<f64> {
        let n = output.index() + 1;
        let mut adj = vec![0.0; n];
        adj[output.index()] = 1.0;
        for node in (0..n).rev() {
            let g = adj[node];
            if g == 0.0 {
                continue;
            }
            let start = if node == 0 { 0 } else { self.edge_end[node - 1] as usize };
            let end = self.edge_end[node] as usize;
            for e in start..end {
                adj[self.parents[e] as usize] += self.partials[e] * g;
            }
        }
        adj
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
