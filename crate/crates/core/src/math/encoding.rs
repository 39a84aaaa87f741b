use std::f64::consts::PI;

/// Frequency encoding of a real vector. For each input component `v_i` and
/// each frequency `k = 0..freqs`, emits `sin(2^k pi v_i), cos(2^k pi v_i)`
/// (component-major). The raw input is *not* included; callers concatenate
/// it themselves when a network wants it.
pub fn positional_encoding(input: &[f64], freqs: usize, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(input.len() * 2 * freqs);
    for &v in input {
        for k in 0..freqs {
            let a = (1u64 << k) as f64 * PI * v;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
}

pub fn encoding_len(input_dim: usize, freqs: usize) -> usize {
    input_dim * 2 * freqs
}

/// Adjoint: grad w.r.t. the raw input given grad w.r.t. the encoded vector.
pub fn positional_encoding_backward(input: &[f64], freqs: usize, grad_out: &[f64], grad_in: &mut [f64]) {
    debug_assert_eq!(grad_out.len(), encoding_len(input.len(), freqs));
    debug_assert_eq!(grad_in.len(), input.len());
    for (i, &v) in input.iter().enumerate() {
        let mut acc = 0.0;
        for k in 0..freqs {
            let w = (1u64 << k) as f64 * PI;
            let a = w * v;
            let base = (i * freqs + k) * 2;
            acc += grad_out[base] * w * a.cos();
            acc -= grad_out[base + 1] * w * a.sin();
        }
        grad_in[i] = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input() {
        let mut out = Vec::new();
        positional_encoding(&[0.0], 2, &mut out);
        assert_eq!(out, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn quarter_period() {
        let mut out = Vec::new();
        positional_encoding(&[0.5], 1, &mut out);
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!(out[1].abs() < 1e-15);
    }

    #[test]
    fn matches_direct_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let freqs = 10;
        let mut out = Vec::new();
        positional_encoding(&v, freqs, &mut out);
        for (i, &x) in v.iter().enumerate() {
            for k in 0..freqs {
                let a = 2f64.powi(k as i32) * PI * x;
                let base = (i * freqs + k) * 2;
                assert!((out[base] - a.sin()).abs() <= 1e-12);
                assert!((out[base + 1] - a.cos()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn two_periodic_at_base_frequency() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        positional_encoding(&[0.37], 1, &mut a);
        positional_encoding(&[2.37], 1, &mut b);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_matches_fd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let freqs = 4;
        let gout: Vec<f64> = (0..encoding_len(3, freqs)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut gin = vec![0.0; 3];
        positional_encoding_backward(&v, freqs, &gout, &mut gin);
        let h = 1e-6;
        let mut buf = Vec::new();
        let loss = |v: &[f64], buf: &mut Vec<f64>| -> f64 {
            positional_encoding(v, freqs, buf);
            buf.iter().zip(gout.iter()).map(|(a, b)| a * b).sum()
        };
        for i in 0..3 {
            let mut vp = v.clone();
            vp[i] += h;
            let mut vm = v.clone();
            vm[i] -= h;
            let fd = (loss(&vp, &mut buf) - loss(&vm, &mut buf)) / (2.0 * h);
            assert!((fd - gin[i]).abs() < 1e-6);
        }
    }
}
