use super::AutodiffError;

/// Dense row-major `f64` tensor.
///
/// A shape of `[]` denotes a scalar holding exactly one value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, AutodiffError> {
        if shape.contains(&0) {
            return Err(AutodiffError::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(AutodiffError::Shape(format!("shape {shape:?} holds {numel} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value], requires_grad: false, grad: None }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Self { shape: vec![n], data, requires_grad: false, grad: None }
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to values. Only valid outside a live graph (e.g. optimizer updates).
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Value at a multi-index; panics on out-of-range indices.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[flat_index(&self.shape, index)]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, AutodiffError> {
        Tensor::new(shape, self.data.clone())
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    assert_eq!(shape.len(), index.len(), "index rank mismatch");
    let mut flat = 0;
    for (d, (&i, &n)) in index.iter().zip(shape).enumerate() {
        assert!(i < n, "index {i} out of range for dim {d} of size {n}");
        flat = flat * n + i;
    }
    flat
}

/// Broadcast shape under trailing-dimension alignment: shapes are right-aligned,
/// missing leading dimensions count as 1, and a dimension of size 1 stretches.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, AutodiffError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(AutodiffError::Shape(format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

/// For every element of the broadcast output, the flat index of the source element
/// in a tensor of shape `src` (which must broadcast to `out`).
pub(crate) fn broadcast_index_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let numel: usize = out.iter().product();
    if src == out {
        return (0..numel).collect();
    }
    let offset = out.len() - src.len();
    let src_strides = strides(src);
    // effective stride per output dim: 0 for broadcast dims
    let eff: Vec<usize> =
        (0..out.len()).map(|d| if d < offset || src[d - offset] == 1 { 0 } else { src_strides[d - offset] }).collect();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out.len()];
    let mut cur = 0usize;
    for _ in 0..numel {
        map.push(cur);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            cur += eff[d];
            if idx[d] < out[d] {
                break;
            }
            cur -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn broadcast_trailing_alignment() {
        assert_eq!(broadcast_shape(&[4, 4, 2], &[2]).unwrap(), vec![4, 4, 2]);
        assert_eq!(broadcast_shape(&[4, 4, 1], &[2]).unwrap(), vec![4, 4, 2]);
        assert_eq!(broadcast_shape(&[], &[3, 2]).unwrap(), vec![3, 2]);
        assert!(broadcast_shape(&[4, 3], &[2]).is_err());
    }

    #[test]
    fn index_map_repeats_source() {
        let map = broadcast_index_map(&[2, 1], &[2, 3]);
        assert_eq!(map, vec![0, 0, 0, 1, 1, 1]);
        let map = broadcast_index_map(&[3], &[2, 3]);
        assert_eq!(map, vec![0, 1, 2, 0, 1, 2]);
        let map = broadcast_index_map(&[], &[2, 2]);
        assert_eq!(map, vec![0, 0, 0, 0]);
    }

    #[test]
    fn at_uses_row_major_order() {
        let t = Tensor::new(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(&[1, 2]), 5.0);
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
    }
}
