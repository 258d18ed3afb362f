//! Classification, ranking, regression and diversity metrics.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::dim(
                "confusion",
                format!("{} predictions vs {} labels", predicted.len(), actual.len()),
            ));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_pos += 1,
                (false, true) => c.false_neg += 1,
                (false, false) => c.true_neg += 1,
            }
        }
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any ratio was 0/0 and replaced by 0.
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

pub fn precision_recall_f1(c: ConfusionCounts) -> F1Score {
    let (tp, fp, fn_) = (c.true_pos as f64, c.false_pos as f64, c.false_neg as f64);
    let mut degenerate = false;
    let precision = ratio(tp, tp + fp, &mut degenerate);
    let recall = ratio(tp, tp + fn_, &mut degenerate);
    let f1 = ratio(2.0 * precision * recall, precision + recall, &mut degenerate);
    F1Score {
        precision,
        recall,
        f1,
        degenerate,
    }
}

/// `Σ_{i<k} (2^{r_i} − 1) / log2(i + 2)` over the list in ranked order.
pub fn dcg_at_k(relevances: &[f64], k: usize) -> f64 {
    relevances
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| (2f64.powf(r) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// DCG normalized by the DCG of the descending-sorted relevances; 0 when that
/// ideal DCG is 0.
pub fn ndcg_at_k(relevances: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Contract("NDCG@k needs k ≥ 1".into()));
    }
    if relevances.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Validation("relevances must be finite and nonnegative".into()));
    }
    let mut ideal = relevances.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg_at_k(relevances, k) / idcg)
}

fn check_pair(op: &'static str, y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::dim(op, format!("{} targets vs {} predictions", y.len(), y_hat.len())));
    }
    if y.is_empty() {
        return Err(Error::Degenerate(format!("{op} of zero pairs")));
    }
    Ok(())
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair("mse", y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair("mae", y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HitRate {
    /// Fraction of lists whose top-k contains a positive.
    pub rate: f64,
    /// `per_position[i]`: fraction of lists with a positive at rank `i + 1`.
    pub per_position: Vec<f64>,
}

/// Hit rate of `lists` against the positive sets, one per list.
pub fn hit_rate_at_k<L, P>(lists: &[L], positives: &[P], k: usize) -> Result<HitRate>
where
    L: AsRef<[usize]>,
    P: AsRef<[usize]>,
{
    if k == 0 {
        return Err(Error::Contract("hit rate needs k ≥ 1".into()));
    }
    if lists.len() != positives.len() {
        return Err(Error::dim(
            "hit_rate",
            format!("{} lists vs {} positive sets", lists.len(), positives.len()),
        ));
    }
    let mut hits = 0usize;
    let mut per_position = vec![0usize; k];
    for (list, pos) in lists.iter().zip(positives) {
        let pos = pos.as_ref();
        let mut any = false;
        for (i, item) in list.as_ref().iter().take(k).enumerate() {
            if pos.contains(item) {
                per_position[i] += 1;
                any = true;
            }
        }
        hits += usize::from(any);
    }
    let n = lists.len().max(1) as f64;
    Ok(HitRate {
        rate: hits as f64 / n,
        per_position: per_position.into_iter().map(|h| h as f64 / n).collect(),
    })
}

/// Cosine of the angle between `a` and `b`; 0 if either is the zero vector.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Mean pairwise cosine similarity of the items; diversity is `1 − ILS`.
pub fn intra_list_similarity<V: AsRef<[f64]>>(items: &[V]) -> Result<f64> {
    if items.len() < 2 {
        return Err(Error::Degenerate(format!(
            "intra-list similarity needs at least 2 items, got {}",
            items.len()
        )));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            total += cosine_similarity(items[i].as_ref(), items[j].as_ref());
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts {
            true_pos: tp,
            false_pos: fp,
            false_neg: fn_,
            true_neg: 0,
        }
    }

    #[test]
    fn f1_cases() {
        let s = precision_recall_f1(counts(5, 0, 0));
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = precision_recall_f1(counts(2, 1, 1));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15 && (s.precision - 2.0 / 3.0).abs() < 1e-15);
        let s = precision_recall_f1(counts(0, 0, 0));
        assert!(s.degenerate && s.f1 == 0.0);
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at_k(&[3.0, 2.0, 0.0], 3).unwrap(), 1.0);
        let v = ndcg_at_k(&[0.0, 3.0], 2).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[0.0, 0.0], 2).unwrap(), 0.0);
        assert!(matches!(ndcg_at_k(&[1.0], 0), Err(Error::Contract(_))));
    }

    #[test]
    fn regression_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[3.0], &[1.0]).unwrap(), 4.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn hit_cases() {
        let lists = vec![vec![1, 2, 3], vec![4, 5, 6]];
        let pos = vec![vec![1], vec![4]];
        let h = hit_rate_at_k(&lists, &pos, 3).unwrap();
        assert_eq!(h.rate, 1.0);
        assert_eq!(h.per_position[0], 1.0);
        let none: Vec<Vec<usize>> = vec![vec![], vec![]];
        assert_eq!(hit_rate_at_k(&lists, &none, 3).unwrap().rate, 0.0);
    }

    #[test]
    fn ils_cases() {
        assert!((intra_list_similarity(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(intra_list_similarity(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), 0.0);
        let s = 1.0 / 2f64.sqrt();
        let v = intra_list_similarity(&[vec![1.0, 0.0], vec![s, s]]).unwrap();
        assert!((v - s).abs() < 1e-15);
        assert!(matches!(intra_list_similarity(&[vec![1.0]]), Err(Error::Degenerate(_))));
    }
}
