use crate::data::{PreprocessedCohort, N_SCORES, STATIC_FULL_DIMS, STATIC_SCOREFREE_DIMS};
use crate::numerics::Tensor;

/// One batch gathered from the preprocessed cohort, in index order.
#[derive(Debug, Clone)]
pub struct BatchData {
    pub x: Tensor,
    pub static_full: Tensor,
    pub static_score_free: Tensor,
    pub reg_targets: Tensor,
    pub labels: Vec<u8>,
}

pub fn gather_batch(cohort: &PreprocessedCohort, indices: &[usize]) -> BatchData {
    let b = indices.len();
    let cells = cohort.vis.first().map_or(0, Vec::len);
    let seq = cells / 7;
    let mut x = Vec::with_capacity(b * cells);
    let mut sf = Vec::with_capacity(b * STATIC_FULL_DIMS);
    let mut ssf = Vec::with_capacity(b * STATIC_SCOREFREE_DIMS);
    let mut reg = Vec::with_capacity(b * N_SCORES);
    let mut labels = Vec::with_capacity(b);
    for &i in indices {
        x.extend_from_slice(&cohort.vis[i]);
        sf.extend_from_slice(&cohort.static_full[i]);
        ssf.extend_from_slice(&cohort.static_score_free[i]);
        reg.extend_from_slice(&cohort.reg_targets[i]);
        labels.push(cohort.labels[i]);
    }
    BatchData {
        x: Tensor::new(vec![b, seq, 7], x).expect("cohort rows are 48x7"),
        static_full: Tensor::new(vec![b, STATIC_FULL_DIMS], sf).expect("static dims fixed"),
        static_score_free: Tensor::new(vec![b, STATIC_SCOREFREE_DIMS], ssf)
            .expect("static dims fixed"),
        reg_targets: Tensor::new(vec![b, N_SCORES], reg).expect("score dims fixed"),
        labels,
    }
}

/// Split `indices` into contiguous batches of at most `batch_size`.
pub fn batches(indices: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    indices.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}
