//! Bilinear demosaicing of RGGB mosaics.

use crate::raw::{split_bayer, BayerRaw, Channel, ChannelStack, Plane, RgbImage};

/// Full-resolution mosaic, one value per photosite, from a channel stack.
fn mosaic(stack: &ChannelStack) -> Plane {
    let (h, w) = stack.dim();
    Plane::from_shape_fn((2 * h, 2 * w), |(r, c)| {
        let ch = match (r % 2, c % 2) {
            (0, 0) => Channel::R,
            (0, _) => Channel::G1,
            (_, 0) => Channel::G2,
            _ => Channel::B,
        };
        stack.plane(ch)[[r / 2, c / 2]]
    })
}

/// Out-of-range neighbours one step past the border map to the nearest site
/// of the same colour, which is edge replication within each colour plane.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// Bilinear interpolation of the missing colours at each photosite.
pub fn demosaic_bilinear(raw: &BayerRaw) -> RgbImage {
    demosaic_stack(&split_bayer(raw))
}

/// [`demosaic_bilinear`] on normalized planes, without quantization.
pub fn demosaic_stack(stack: &ChannelStack) -> RgbImage {
    let m = mosaic(stack);
    let (rows, cols) = m.dim();
    let at = |r: isize, c: isize| m[[reflect(r, rows), reflect(c, cols)]];
    let mut red = Plane::zeros((rows, cols));
    let mut green = Plane::zeros((rows, cols));
    let mut blue = Plane::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let (ri, ci) = (r as isize, c as isize);
            let v = m[[r, c]];
            let cross = 0.25 * (at(ri - 1, ci) + at(ri + 1, ci) + at(ri, ci - 1) + at(ri, ci + 1));
            let diag = 0.25
                * (at(ri - 1, ci - 1) + at(ri - 1, ci + 1) + at(ri + 1, ci - 1) + at(ri + 1, ci + 1));
            let horiz = 0.5 * (at(ri, ci - 1) + at(ri, ci + 1));
            let vert = 0.5 * (at(ri - 1, ci) + at(ri + 1, ci));
            let (rv, gv, bv) = match (r % 2, c % 2) {
                (0, 0) => (v, cross, diag),
                (0, _) => (horiz, v, vert),
                (_, 0) => (vert, v, horiz),
                _ => (diag, cross, v),
            };
            red[[r, c]] = rv;
            green[[r, c]] = gv;
            blue[[r, c]] = bv;
        }
    }
    RgbImage::new([red, green, blue]).expect("planes share dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::Color;

    fn stack_from_mosaic(m: &Plane) -> ChannelStack {
        let (h, w) = (m.nrows() / 2, m.ncols() / 2);
        let pick = |dr: usize, dc: usize| Plane::from_shape_fn((h, w), |(r, c)| m[[2 * r + dr, 2 * c + dc]]);
        ChannelStack::new([pick(0, 0), pick(0, 1), pick(1, 0), pick(1, 1)]).unwrap()
    }

    #[test]
    fn hand_computed_four_by_four() {
        let m = Plane::from_shape_fn((4, 4), |(r, c)| (4 * r + c) as f64);
        let rgb = demosaic_stack(&stack_from_mosaic(&m));
        let (red, green, blue) = (
            rgb.channel(Color::Red),
            rgb.channel(Color::Green),
            rgb.channel(Color::Blue),
        );
        // B site (1,1)
        assert_eq!(blue[[1, 1]], 5.0);
        assert_eq!(red[[1, 1]], (0.0 + 2.0 + 8.0 + 10.0) / 4.0);
        assert_eq!(green[[1, 1]], (1.0 + 9.0 + 4.0 + 6.0) / 4.0);
        // G2 site (1,2)
        assert_eq!(green[[1, 2]], 6.0);
        assert_eq!(red[[1, 2]], (2.0 + 10.0) / 2.0);
        assert_eq!(blue[[1, 2]], (5.0 + 7.0) / 2.0);
        // G1 site (2,1)
        assert_eq!(green[[2, 1]], 9.0);
        assert_eq!(red[[2, 1]], (8.0 + 10.0) / 2.0);
        assert_eq!(blue[[2, 1]], (5.0 + 13.0) / 2.0);
        // R site (0,0) reflects to (1,*) and (*,1)
        assert_eq!(red[[0, 0]], 0.0);
        assert_eq!(green[[0, 0]], (4.0 + 4.0 + 1.0 + 1.0) / 4.0);
        assert_eq!(blue[[0, 0]], 5.0);
        // B site (3,3) at the far corner
        assert_eq!(red[[3, 3]], 10.0);
        assert_eq!(green[[3, 3]], (11.0 + 11.0 + 14.0 + 14.0) / 4.0);
    }

    #[test]
    fn constant_mosaic_stays_constant() {
        let stack = ChannelStack::constant(3, 5, 0.3);
        let rgb = demosaic_stack(&stack);
        for ch in rgb.channels() {
            assert!(ch.iter().all(|v| (v - 0.3).abs() < 1e-15));
        }
        assert_eq!((rgb.width(), rgb.height()), (10, 6));
    }

    #[test]
    fn uniform_colour_is_exact() {
        let planes = [0.8, 0.5, 0.5, 0.2].map(|v| Plane::from_elem((4, 4), v));
        let rgb = demosaic_stack(&ChannelStack::new(planes).unwrap());
        assert!(rgb.channel(Color::Red).iter().all(|&v| v == 0.8));
        assert!(rgb.channel(Color::Green).iter().all(|&v| v == 0.5));
        assert!(rgb.channel(Color::Blue).iter().all(|&v| v == 0.2));
    }

    #[test]
    fn raw_output_matches_raw_dimensions() {
        let samples: Vec<u16> = (0..6 * 4).map(|i| (i * 1000) as u16).collect();
        let raw = BayerRaw::new(6, 4, samples).unwrap();
        let rgb = demosaic_bilinear(&raw);
        assert_eq!((rgb.width(), rgb.height()), (6, 4));
        assert_eq!(rgb.channel(Color::Red)[[0, 0]], 0.0);
        assert_eq!(rgb.channel(Color::Green)[[0, 1]], 1000.0 / raw.white_level() as f64);
    }
}
