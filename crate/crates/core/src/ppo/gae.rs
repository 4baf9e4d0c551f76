/// Advantages and returns for one environment's step sequence.
///
/// `next_values[t]` is `V(s_{t+1})`, already zero where the episode
/// terminated; `ends[t]` marks any episode boundary (termination or
/// truncation) after step `t`, where the recursion is cut.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    ends: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_values[t] - values[t];
        if ends[t] {
            carry = 0.0;
        }
        carry = delta + gamma * lambda * carry;
        adv[t] = carry;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shifts and scales to zero mean and unit variance; the scale is at least 1e-8.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_step_hand_example() {
        let (a, r) = gae(&[0.0, 0.0, 1.0], &[0.0; 3], &[0.0; 3], &[false, false, true], 0.99, 0.98);
        let g = 0.99 * 0.98;
        assert!((a[0] - g * g).abs() < 1e-12);
        assert!((a[1] - g).abs() < 1e-12);
        assert!((a[2] - 1.0).abs() < 1e-12);
        assert_eq!(a, r);
    }

    #[test]
    fn undiscounted_telescopes_to_return_minus_value() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let v = [0.5, -1.0, 2.0, 0.25];
        let next = [v[1], v[2], v[3], 0.0];
        let (a, ret) = gae(&r, &v, &next, &[false, false, false, true], 1.0, 1.0);
        for t in 0..4 {
            let future: f64 = r[t..].iter().sum();
            assert!((a[t] - (future - v[t])).abs() < 1e-12);
            assert!((ret[t] - future).abs() < 1e-12);
        }
    }

    #[test]
    fn boundaries_cut_the_recursion() {
        let (a, _) = gae(&[0.0, 1.0, 0.0, 1.0], &[0.0; 4], &[0.0; 4], &[false, true, false, true], 0.9, 0.9);
        assert!((a[0] - 0.81).abs() < 1e-12 && a[1] == 1.0);
        assert!((a[2] - 0.81).abs() < 1e-12 && a[3] == 1.0);
        let (z, _) = gae(&[0.0; 5], &[0.0; 5], &[0.0; 5], &[false; 5], 0.99, 0.98);
        assert!(z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalisation_moments() {
        let mut a: Vec<f64> = (0..101).map(|k| (k as f64 * 0.37).sin() * 5.0 + 2.0).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 1e-10 && (sd - 1.0).abs() <= 1e-10);
        let mut flat = vec![3.0; 4];
        normalize_advantages(&mut flat);
        assert!(flat.iter().all(|&x| x == 0.0));
    }
}
