/// Macro F1 counted directly from the definition, one category at a time.
pub fn brute_force_macro_f1(pred: &[usize], labels: &[usize], c: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..c {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for i in 0..pred.len() {
            match (pred[i] == k, labels[i] == k) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
        total += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    total / c as f64
}
