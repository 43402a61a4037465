use crate::tensor::{Float, Tensor};

/// Index into `0..len` after reflecting `i` about the edges, without
/// repeating the edge sample.
fn reflect(mut i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    i %= period;
    if i < len {
        i
    } else {
        period - i
    }
}

fn round_up(x: usize, multiple: usize) -> usize {
    x.div_ceil(multiple) * multiple
}

/// Reflection-pads the bottom and right edges of `x: [N, C, H, W]` up to the
/// next multiples of `multiple`. Returns the padded tensor and `(H, W)`.
pub fn pad_reflect<T: Float>(x: &Tensor<T>, multiple: usize) -> (Tensor<T>, (usize, usize)) {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ph, pw) = (round_up(h, multiple), round_up(w, multiple));
    if (ph, pw) == (h, w) {
        return (x.clone(), (h, w));
    }
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ph {
            let row = base + reflect(i, h) * w;
            out.extend_from_slice(&src[row..row + w]);
            out.extend((w..pw).map(|j| src[row + reflect(j, w)]));
        }
    }
    (Tensor::new(vec![n, c, ph, pw], out).expect("padded shape"), (h, w))
}

/// Top-left `h x w` window of `x: [N, C, H, W]`.
pub fn crop<T: Float>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let s = x.shape();
    let (n, c, xh, xw) = (s[0], s[1], s[2], s[3]);
    assert!(h <= xh && w <= xw, "crop window exceeds tensor");
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in 0..n * c {
        for i in 0..h {
            let row = (plane * xh + i) * xw;
            out.extend_from_slice(&src[row..row + w]);
        }
    }
    Tensor::new(vec![n, c, h, w], out).expect("cropped shape")
}
