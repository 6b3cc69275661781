//! SLIC superpixels in CIELAB space.

use std::collections::{BTreeSet, VecDeque};

use super::{neighbors4, SuperpixelError, SuperpixelLabeling};
use crate::tensor_io::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub k_target: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            k_target: 256,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

/// sRGB (D65) to CIELAB.
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    fn linear(c: u8) -> f64 {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        const EPS: f64 = 216.0 / 24389.0;
        const KAPPA: f64 = 24389.0 / 27.0;
        if t > EPS {
            t.cbrt()
        } else {
            (KAPPA * t + 16.0) / 116.0
        }
    }
    let [r, g, b] = rgb.map(linear);
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = (0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b) / 1.088_83;
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

fn lab_dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Seed grid with `nx * ny ≈ k` cells shaped after the image aspect ratio.
fn grid_shape(k: usize, width: usize, height: usize) -> (usize, usize) {
    let nx = ((k as f64 * width as f64 / height as f64).sqrt().round() as usize).clamp(1, width);
    let ny = ((k as f64 / nx as f64).round() as usize).clamp(1, height);
    (nx, ny)
}

/// Partitions `image` into compact, 4-connected superpixels.
///
/// Centers start on a regular grid, move to the lowest-gradient pixel of their
/// 3×3 neighbourhood, then alternate local assignment under
/// `d² = d_lab² + (compactness / S)² · d_xy²` with mean updates. Fragments
/// disconnected from their segment's main body, and segments smaller than a
/// quarter of the nominal area, are merged into the largest adjacent segment.
pub fn slic_segment(
    image: &RgbImage,
    params: &SlicParams,
) -> Result<SuperpixelLabeling, SuperpixelError> {
    let (w, h) = (image.width, image.height);
    if w < 8 || h < 8 {
        return Err(SuperpixelError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let k = params.k_target;
    if k < 2 {
        return Err(SuperpixelError::TooFewSegments { k });
    }
    if k > w * h {
        return Err(SuperpixelError::TooManySegments { k, pixels: w * h });
    }
    if !(params.compactness.is_finite() && params.compactness > 0.0) {
        return Err(SuperpixelError::InvalidParameter(
            "compactness must be positive",
        ));
    }
    if params.iterations == 0 {
        return Err(SuperpixelError::InvalidParameter(
            "iterations must be at least 1",
        ));
    }

    let lab: Vec<[f64; 3]> = image
        .data
        .chunks_exact(3)
        .map(|c| rgb_to_lab([c[0], c[1], c[2]]))
        .collect();
    let (nx, ny) = grid_shape(k, w, h);
    let step_x = w as f64 / nx as f64;
    let step_y = h as f64 / ny as f64;
    let step = (w as f64 * h as f64 / (nx * ny) as f64).sqrt();
    let spatial = (params.compactness / step).powi(2);

    let gradient = |x: usize, y: usize| {
        let at = |x: usize, y: usize| &lab[y * w + x];
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        lab_dist2(at(xr, y), at(xl, y)) + lab_dist2(at(x, yd), at(x, yu))
    };

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // cell centre in pixel-centre coordinates
            let fx = (i as f64 + 0.5) * step_x - 0.5;
            let fy = (j as f64 + 0.5) * step_y - 0.5;
            let gx = (fx.round() as usize).min(w - 1);
            let gy = (fy.round() as usize).min(h - 1);
            let (mut bx, mut by) = (fx, fy);
            let mut best = gradient(gx, gy);
            let mut seed_px = (gx, gy);
            for yy in gy.saturating_sub(1)..=(gy + 1).min(h - 1) {
                for xx in gx.saturating_sub(1)..=(gx + 1).min(w - 1) {
                    let g = gradient(xx, yy);
                    if g < best {
                        best = g;
                        bx = xx as f64;
                        by = yy as f64;
                        seed_px = (xx, yy);
                    }
                }
            }
            centers.push(Center {
                lab: lab[seed_px.1 * w + seed_px.0],
                x: bx,
                y: by,
            });
        }
    }

    // pixels outside every search window keep their grid cell
    let mut labels: Vec<usize> = (0..w * h)
        .map(|p| {
            let i = ((p % w) as f64 / step_x) as usize;
            let j = ((p / w) as f64 / step_y) as usize;
            j.min(ny - 1) * nx + i.min(nx - 1)
        })
        .collect();

    let radius = step_x.max(step_y);
    let mut dist = vec![f64::INFINITY; w * h];
    for _ in 0..params.iterations {
        dist.fill(f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let x0 = (c.x - radius).floor().max(0.0) as usize;
            let x1 = ((c.x + radius).ceil() as usize).min(w - 1);
            let y0 = (c.y - radius).floor().max(0.0) as usize;
            let y1 = ((c.y + radius).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * w + x;
                    let dxy = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                    let d = lab_dist2(&lab[p], &c.lab) + spatial * dxy;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = ci;
                    }
                }
            }
        }

        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let a = &mut acc[l];
            a[0] += lab[p][0];
            a[1] += lab[p][1];
            a[2] += lab[p][2];
            a[3] += (p % w) as f64;
            a[4] += (p / w) as f64;
            a[5] += 1.0;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                c.lab = [a[0] / a[5], a[1] / a[5], a[2] / a[5]];
                c.x = a[3] / a[5];
                c.y = a[4] / a[5];
            }
        }
    }

    let min_size = ((step * step) / 4.0).floor().max(1.0) as usize;
    let labels = enforce_connectivity(&labels, w, h, min_size, k.div_ceil(2));
    SuperpixelLabeling::new(w, h, labels)
}

/// Keeps the largest 4-connected piece of each label (if it has at least
/// `min_size` pixels) and merges every other piece into its largest adjacent
/// kept region. When fewer than `min_count` pieces qualify, the largest
/// leftover pieces are kept as segments of their own. Output labels are
/// renumbered in raster order.
fn enforce_connectivity(
    labels: &[usize],
    w: usize,
    h: usize,
    min_size: usize,
    min_count: usize,
) -> Vec<u32> {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut comp_size = Vec::new();
    let mut comp_label = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_size.len();
        let label = labels[start];
        let mut size = 0;
        comp[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            for q in neighbors4(p, w, h) {
                if comp[q] == usize::MAX && labels[q] == label {
                    comp[q] = id;
                    queue.push_back(q);
                }
            }
        }
        comp_size.push(size);
        comp_label.push(label);
    }
    let n_comp = comp_size.len();

    let n_labels = labels.iter().max().map_or(0, |&m| m + 1);
    let mut largest: Vec<Option<usize>> = vec![None; n_labels];
    for c in 0..n_comp {
        let slot = &mut largest[comp_label[c]];
        if slot.is_none_or(|best| comp_size[c] > comp_size[best]) {
            *slot = Some(c);
        }
    }
    let mut root: Vec<Option<usize>> = vec![None; n_comp];
    let mut region_size = comp_size.clone();
    for c in largest.iter().flatten() {
        if comp_size[*c] >= min_size {
            root[*c] = Some(*c);
        }
    }
    // top up with the largest remaining pieces so at least `min_count` survive
    let kept = root.iter().filter(|r| r.is_some()).count();
    if kept < min_count.max(1) {
        let mut rest: Vec<usize> = (0..n_comp).filter(|&c| root[c].is_none()).collect();
        rest.sort_by_key(|&c| (std::cmp::Reverse(comp_size[c]), c));
        for c in rest.into_iter().take(min_count.max(1) - kept) {
            root[c] = Some(c);
        }
    }

    let mut adjacency = vec![BTreeSet::new(); n_comp];
    for p in 0..n {
        for q in neighbors4(p, w, h) {
            if comp[p] != comp[q] {
                adjacency[comp[p]].insert(comp[q]);
            }
        }
    }

    let mut pending: Vec<usize> = (0..n_comp).filter(|&c| root[c].is_none()).collect();
    while !pending.is_empty() {
        let mut still = Vec::new();
        for &c in &pending {
            let target = adjacency[c]
                .iter()
                .filter_map(|&nb| root[nb])
                .max_by_key(|&r| (region_size[r], std::cmp::Reverse(r)));
            match target {
                Some(r) => {
                    root[c] = Some(r);
                    region_size[r] += comp_size[c];
                }
                None => still.push(c),
            }
        }
        debug_assert!(still.len() < pending.len(), "grid adjacency is connected");
        pending = still;
    }

    let mut renumber = vec![u32::MAX; n_comp];
    let mut next = 0u32;
    comp.iter()
        .map(|&c| {
            let r = root[c].expect("all components assigned");
            if renumber[r] == u32::MAX {
                renumber[r] = next;
                next += 1;
            }
            renumber[r]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(width: usize, height: usize, rgb: [u8; 3]) -> RgbImage {
        RgbImage::new(width, height, rgb.repeat(width * height)).unwrap()
    }

    fn random_image(seed: u64, width: usize, height: usize) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // blocky noise so segments have something to follow
        let block: Vec<[u8; 3]> = (0..64)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let data = (0..width * height)
            .flat_map(|p| {
                let (x, y) = (p % width, p / width);
                let b = block[(y / 6 % 8) * 8 + x / 6 % 8];
                let jitter: u8 = rng.random_range(0..16);
                b.map(|v| v.saturating_add(jitter))
            })
            .collect();
        RgbImage::new(width, height, data).unwrap()
    }

    #[test]
    fn lab_reference_values() {
        let white = rgb_to_lab([255, 255, 255]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-3 && white[2].abs() < 1e-3);
        assert_eq!(rgb_to_lab([0, 0, 0]), [0.0, 0.0, 0.0]);
        // sRGB red is L*a*b* ≈ (53.24, 80.09, 67.20)
        let red = rgb_to_lab([255, 0, 0]);
        assert!(
            (red[0] - 53.24).abs() < 0.01
                && (red[1] - 80.09).abs() < 0.02
                && (red[2] - 67.20).abs() < 0.02
        );
    }

    #[test]
    fn uniform_image_gives_equal_quadrants() {
        let lab = slic_segment(
            &uniform(64, 64, [90, 120, 30]),
            &SlicParams {
                k_target: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(lab.count(), 4);
        // with no colour gradient the assignment is the Voronoi diagram of
        // seeds at (16,16), (48,16), (16,48), (48,48): four 32×32 quadrants
        for size in lab.segment_sizes() {
            assert!((size as f64 - 1024.0).abs() <= 102.4, "{size}");
        }
        for y in 0..64 {
            for x in 0..64 {
                let quadrant = (y / 32) * 2 + x / 32;
                assert_eq!(lab.label(x, y) as usize, quadrant);
            }
        }
    }

    #[test]
    fn k_exceeding_pixels_is_rejected() {
        let err = slic_segment(
            &uniform(8, 8, [0, 0, 0]),
            &SlicParams {
                k_target: 65,
                ..Default::default()
            },
        );
        assert!(matches!(
            err,
            Err(SuperpixelError::TooManySegments { k: 65, pixels: 64 })
        ));
        let err = slic_segment(
            &uniform(7, 8, [0, 0, 0]),
            &SlicParams {
                k_target: 4,
                ..Default::default()
            },
        );
        assert!(matches!(err, Err(SuperpixelError::ImageTooSmall { .. })));
        let err = slic_segment(
            &uniform(8, 8, [0, 0, 0]),
            &SlicParams {
                k_target: 1,
                ..Default::default()
            },
        );
        assert!(matches!(err, Err(SuperpixelError::TooFewSegments { .. })));
    }

    #[test]
    fn two_tone_boundary_follows_the_tone_edge() {
        let (w, h, split) = (64usize, 32usize, 29usize);
        let data: Vec<u8> = (0..w * h)
            .flat_map(|p| {
                if p % w < split {
                    [200, 40, 40]
                } else {
                    [30, 60, 210]
                }
            })
            .collect();
        let image = RgbImage::new(w, h, data).unwrap();
        let lab = slic_segment(
            &image,
            &SlicParams {
                k_target: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(lab.count(), 2);

        // oracle: exhaustive nearest-center assignment in the SLIC distance
        // against the two tone means and their spatial centroids
        let step = ((w * h) as f64 / 2.0).sqrt();
        let spatial = (10.0 / step).powi(2);
        let left = rgb_to_lab([200, 40, 40]);
        let right = rgb_to_lab([30, 60, 210]);
        let cx = [(split as f64 - 1.0) / 2.0, (split + w - 1) as f64 / 2.0];
        let cy = (h as f64 - 1.0) / 2.0;
        for y in 0..h {
            for x in 0..w {
                let px = if x < split { left } else { right };
                let d: Vec<f64> = [left, right]
                    .iter()
                    .zip(cx)
                    .map(|(c, cx)| {
                        lab_dist2(&px, c)
                            + spatial * ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2))
                    })
                    .collect();
                let oracle = u32::from(d[1] < d[0]);
                assert_eq!(oracle, u32::from(x >= split));
                let got = lab.label(x, y);
                // label transitions sit within one pixel of the tone edge
                if x > 0 && got != lab.label(x - 1, y) {
                    assert!(x.abs_diff(split) <= 1, "boundary at x={x}");
                }
                assert_eq!(got == lab.label(0, 0), oracle == 0);
            }
        }
    }

    #[test]
    fn deterministic() {
        let img = random_image(5, 48, 40);
        let p = SlicParams {
            k_target: 30,
            ..Default::default()
        };
        assert_eq!(
            slic_segment(&img, &p).unwrap(),
            slic_segment(&img, &p).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn labeling_invariants(seed in any::<u64>(), w in 16usize..72, h in 16usize..72, k in 2usize..120) {
            let img = random_image(seed, w, h);
            let k = k.min(w * h / 4);
            let lab = slic_segment(&img, &SlicParams { k_target: k, ..Default::default() }).unwrap();
            prop_assert!(lab.is_connected());
            prop_assert!(lab.segment_sizes().iter().all(|&s| s > 0));
            prop_assert!(lab.count() * 2 >= k && lab.count() <= 2 * k, "k_target {} got {}", k, lab.count());
        }
    }
}
