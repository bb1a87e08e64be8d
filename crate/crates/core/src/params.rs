//! Named parameter tensors shared by the model, its gradients, the optimizer
//! and the checkpoint format.

/// Read-only view of one parameter tensor.
pub struct Tensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Mutable view of one parameter tensor.
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// A component whose trainable state is a fixed, ordered list of tensors.
///
/// Gradients are stored in a value of the same type, so `tensors()` on the
/// model and on its gradient line up one-to-one.
pub trait Parameterized: Clone {
    fn tensors(&self) -> Vec<Tensor<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data);
        }
        out
    }

    /// Overwrites every parameter from a flat vector in `tensors()` order.
    fn set_flat(&mut self, values: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) {
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.data.iter_mut().zip(s.data) {
                *d += v;
            }
        }
    }

    fn scale_all(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for v in t.data.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Prefixes tensor names of a child component.
pub(crate) fn prefixed<'a>(prefix: &str, ts: Vec<Tensor<'a>>) -> impl Iterator<Item = Tensor<'a>> + 'a {
    let prefix = prefix.to_string();
    ts.into_iter().map(move |mut t| {
        t.name = format!("{prefix}.{}", t.name);
        t
    })
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    ts: Vec<TensorMut<'a>>,
) -> impl Iterator<Item = TensorMut<'a>> + 'a {
    let prefix = prefix.to_string();
    ts.into_iter().map(move |mut t| {
        t.name = format!("{prefix}.{}", t.name);
        t
    })
}
