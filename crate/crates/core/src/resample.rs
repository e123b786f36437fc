//! Bilinear resampling of single 2-D planes.

/// Corner-aligned bilinear resize: output corners sample input corners
/// exactly. A one-pixel output extent samples the input centre.
pub fn resize_bilinear(plane: &[f64], h_in: usize, w_in: usize, h_out: usize, w_out: usize) -> Vec<f64> {
    assert_eq!(plane.len(), h_in * w_in);
    if h_in == h_out && w_in == w_out {
        return plane.to_vec();
    }
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let pos = if n_out == 1 {
            (n_in - 1) as f64 / 2.0
        } else {
            o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        };
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..w_out).map(|j| coord(j, w_in, w_out)).collect();
    let mut out = Vec::with_capacity(h_out * w_out);
    for i in 0..h_out {
        let (r0, r1, ty) = coord(i, h_in, h_out);
        for &(c0, c1, tx) in &cols {
            let a = plane[r0 * w_in + c0];
            let b = plane[r0 * w_in + c1];
            let c = plane[r1 * w_in + c0];
            let d = plane[r1 * w_in + c1];
            // a + (b - a)·t keeps constant planes exactly constant
            let top = a + (b - a) * tx;
            let bottom = c + (d - c) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let plane = vec![0.3; 7 * 5];
        let out = resize_bilinear(&plane, 7, 5, 32, 19);
        assert!(out.iter().all(|&v| v == 0.3));
    }

    #[test]
    fn corners_preserved_on_upsample() {
        let plane = vec![0.0, 1.0, 2.0, 3.0];
        let out = resize_bilinear(&plane, 2, 2, 5, 5);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[4], 1.0);
        assert_eq!(out[20], 2.0);
        assert_eq!(out[24], 3.0);
        assert_eq!(out[12], 1.5);
    }

    #[test]
    fn single_pixel_input_broadcasts() {
        let out = resize_bilinear(&[4.0], 1, 1, 3, 3);
        assert_eq!(out, vec![4.0; 9]);
    }
}
