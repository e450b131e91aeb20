use crate::eval::mask::Mask;

/// Lower envelope of parabolas: squared distance to the nearest finite
/// sample along one line. Lines without finite samples stay infinite.
fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, zb: &mut Vec<f64>) {
    v.clear();
    zb.clear();
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    zb.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
                    if s <= *zb.last().unwrap() {
                        v.pop();
                        zb.pop();
                    } else {
                        v.push(q);
                        zb.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && zb[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (voxel units) from every voxel to the
/// nearest true voxel of `features`; infinite when there is none.
pub fn edt_squared(features: &Mask) -> Vec<f64> {
    let dims = features.dims();
    let mut d: Vec<f64> = features
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let (mut v, mut zb) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = dims[axis];
        let (mut line, mut out) = (vec![0.0; n], vec![0.0; n]);
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for j in 0..dims[others[1]] {
            for i in 0..dims[others[0]] {
                let base = i * strides[others[0]] + j * strides[others[1]];
                for (q, l) in line.iter_mut().enumerate() {
                    *l = d[base + q * strides[axis]];
                }
                envelope_1d(&line, &mut out, &mut v, &mut zb);
                for (q, o) in out.iter().enumerate() {
                    d[base + q * strides[axis]] = *o;
                }
            }
        }
    }
    d
}

pub fn edt(features: &Mask) -> Vec<f64> {
    edt_squared(features).into_iter().map(f64::sqrt).collect()
}
