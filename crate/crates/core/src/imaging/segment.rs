use super::{BinaryImage, GrayImage};

/// Pixels strictly above `t` become foreground (255); pixels at or below it become 0.
pub fn threshold_binary(img: &GrayImage, t: u8) -> BinaryImage {
    let px = img.pixels();
    BinaryImage::from_mask(img.width(), img.height(), |i| px[i] > t)
}

/// Otsu's method over the 256-bin histogram.
///
/// Returns the binarized image together with the threshold that maximizes the
/// between-class variance, where class 0 holds intensities `<= t`. Ties go to
/// the smallest `t`. A constant image yields its own intensity as threshold and
/// an all-background output.
pub fn threshold_otsu(img: &GrayImage) -> (BinaryImage, u8) {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let total_n: u64 = hist.iter().sum();
    let total_s: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();

    // With counts n0, n1 and intensity sums s0, s1 the between-class variance
    // scaled by N^2 is (s0*n1 - s1*n0)^2 / (n0*n1). Comparing the fractions by
    // cross-multiplication in u128 keeps the search exact, so ties are real ties.
    let mut best: Option<(u8, u128, u128)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for t in 0..=255u8 {
        n0 += hist[t as usize];
        s0 += t as u64 * hist[t as usize];
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_s - s0;
        let diff = (s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128).unsigned_abs();
        let num = diff * diff;
        let den = n0 as u128 * n1 as u128;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t, num, den));
        }
    }
    let t = match best {
        Some((t, _, _)) => t,
        // a single occupied bin: every split leaves one class empty
        None => img.pixels().first().copied().unwrap_or(0),
    };
    (threshold_binary(img, t), t)
}

/// Keeps only the largest 8-connected foreground component.
///
/// When two components share the maximal size, the one whose first pixel
/// appears earliest in row-major order wins.
pub fn largest_foreground_mask(img: &BinaryImage) -> BinaryImage {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    let mut label = vec![0u32; w * h];
    let mut stack = Vec::new();
    let mut next = 0u32;
    let mut best = (0u32, 0usize);
    for start in 0..w * h {
        if px[start] != 255 || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0usize;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if px[j] == 255 && label[j] == 0 {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    let keep = best.0;
    BinaryImage::from_mask(w, h, |i| keep != 0 && label[i] == keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binary_from_ascii(rows: &[&str]) -> BinaryImage {
        let w = rows[0].len();
        let px = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| if b == b'#' { 255 } else { 0 }))
            .collect();
        BinaryImage::new(w, rows.len(), px).unwrap()
    }

    /// Component sizes by a recursive flood fill, independent of the iterative labeler.
    fn component_sizes(img: &BinaryImage) -> Vec<usize> {
        fn fill(img: &BinaryImage, seen: &mut [bool], x: isize, y: isize) -> usize {
            let (w, h) = (img.width() as isize, img.height() as isize);
            if x < 0 || y < 0 || x >= w || y >= h {
                return 0;
            }
            let i = (y * w + x) as usize;
            if seen[i] || !img.is_foreground(x as usize, y as usize) {
                return 0;
            }
            seen[i] = true;
            let mut n = 1;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    n += fill(img, seen, x + dx, y + dy);
                }
            }
            n
        }
        let mut seen = vec![false; img.pixels().len()];
        let mut sizes = Vec::new();
        for y in 0..img.height() {
            for x in 0..img.width() {
                let n = fill(img, &mut seen, x as isize, y as isize);
                if n > 0 {
                    sizes.push(n);
                }
            }
        }
        sizes
    }

    #[test]
    fn threshold_equality_maps_to_background() {
        let img = GrayImage::new(3, 1, vec![91, 90, 89]).unwrap();
        assert_eq!(threshold_binary(&img, 90).pixels(), &[255, 0, 0]);
        let zeros = GrayImage::filled(4, 4, 0).unwrap();
        assert_eq!(threshold_binary(&zeros, 0).foreground_count(), 0);
    }

    #[test]
    fn otsu_on_constant_image() {
        let img = GrayImage::filled(5, 5, 123).unwrap();
        let (bin, t) = threshold_otsu(&img);
        assert_eq!(t, 123);
        assert_eq!(bin.foreground_count(), 0);
    }

    #[test]
    fn otsu_separates_two_populations() {
        let img = GrayImage::from_fn(10, 10, |x, _| if x < 5 { 50 } else { 200 }).unwrap();
        let (bin, t) = threshold_otsu(&img);
        assert!((50..=199).contains(&t));
        // every split between the populations ties; the smallest wins
        assert_eq!(t, 50);
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(bin.is_foreground(x, y), x >= 5);
            }
        }
    }

    #[test]
    fn largest_blob_wins() {
        let img = binary_from_ascii(&[
            "###.....", //
            "###...##", "###...##", ".......#",
        ]);
        let mut sizes = component_sizes(&img);
        sizes.sort();
        assert_eq!(sizes, vec![5, 9]);
        let kept = largest_foreground_mask(&img);
        assert_eq!(kept.foreground_count(), 9);
        assert!(kept.is_foreground(0, 0) && !kept.is_foreground(6, 1));
    }

    #[test]
    fn diagonal_neighbors_connect() {
        let img = binary_from_ascii(&["#..", ".#.", "..#", "#.."]);
        let kept = largest_foreground_mask(&img);
        assert_eq!(kept.foreground_count(), 3);
        assert!(!kept.is_foreground(0, 3));
    }

    #[test]
    fn single_blob_and_empty() {
        let blob = binary_from_ascii(&["....", ".##.", ".#..", "...."]);
        assert_eq!(largest_foreground_mask(&blob), blob);
        let empty = binary_from_ascii(&["...", "..."]);
        assert_eq!(largest_foreground_mask(&empty), empty);
    }

    fn arb_image() -> impl Strategy<Value = GrayImage> {
        (1usize..14, 1usize..14).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h)
                .prop_map(move |px| GrayImage::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn threshold_count_is_monotone(img in arb_image(), t in any::<u8>()) {
            let at = threshold_binary(&img, t);
            prop_assert!(at.pixels().iter().all(|&p| p == 0 || p == 255));
            if t < 255 {
                prop_assert!(threshold_binary(&img, t + 1).foreground_count() <= at.foreground_count());
            }
        }

        #[test]
        fn mask_is_single_component_subset(img in arb_image(), t in any::<u8>()) {
            let bin = threshold_binary(&img, t);
            let kept = largest_foreground_mask(&bin);
            for (k, b) in kept.pixels().iter().zip(bin.pixels()) {
                prop_assert!(*k == 0 || *b == 255);
            }
            let sizes = component_sizes(&kept);
            prop_assert!(sizes.len() <= 1);
            let all = component_sizes(&bin);
            prop_assert_eq!(sizes.first().copied().unwrap_or(0), all.into_iter().max().unwrap_or(0));
        }
    }
}
