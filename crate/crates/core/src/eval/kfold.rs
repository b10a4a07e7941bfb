use super::{EvalError, GraspRun};

/// One fold: test on a single run, train on the others.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<'a> {
    pub fold: usize,
    pub train: Vec<&'a GraspRun>,
    pub test: Vec<&'a GraspRun>,
}

/// Leave-one-run-out splits of one class: fold `i` tests on the `i`-th run.
pub fn kfold_by_run<'a>(runs: &[&'a GraspRun], k: usize) -> Result<Vec<Split<'a>>, EvalError> {
    let Some(first) = runs.first() else {
        return Err(EvalError::InvalidConfig("no runs to split".into()));
    };
    if runs.iter().any(|r| r.class != first.class) {
        return Err(EvalError::InvalidConfig("k-fold runs must share one class".into()));
    }
    if runs.len() != k || k < 2 {
        return Err(EvalError::FoldCount {
            class: first.class,
            runs: runs.len(),
            k,
        });
    }
    Ok((0..k)
        .map(|i| Split {
            fold: i,
            train: runs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| *r).collect(),
            test: vec![runs[i]],
        })
        .collect())
}
