//! Binary erosion/dilation with rectangular structuring elements.
//!
//! Elements are centered; neighbors outside the image are ignored.

use crate::raster::BinaryMask;

/// Rectangular element `rows` tall and `cols` wide. Both must be odd.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub rows: usize,
    pub cols: usize,
}

impl Rect {
    pub const fn new(rows: usize, cols: usize) -> Self {
        assert!(rows % 2 == 1 && cols % 2 == 1);
        Self { rows, cols }
    }
}

fn apply(mask: &BinaryMask, se: Rect, erode: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let (ry, rx) = ((se.rows / 2) as isize, (se.cols / 2) as isize);
    let src = mask.pixels();
    let mut out = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut hit = erode;
            'scan: for dy in -ry..=ry {
                let yy = y + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -rx..=rx {
                    let xx = x + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let v = src[yy as usize * w + xx as usize];
                    if erode && !v {
                        hit = false;
                        break 'scan;
                    }
                    if !erode && v {
                        hit = true;
                        break 'scan;
                    }
                }
            }
            out[y as usize * w + x as usize] = hit;
        }
    }
    BinaryMask::new(w, h, out).expect("dimensions preserved")
}

pub fn erode(mask: &BinaryMask, se: Rect) -> BinaryMask {
    apply(mask, se, true)
}

pub fn dilate(mask: &BinaryMask, se: Rect) -> BinaryMask {
    apply(mask, se, false)
}

pub fn open(mask: &BinaryMask, se: Rect) -> BinaryMask {
    dilate(&erode(mask, se), se)
}

pub fn close(mask: &BinaryMask, se: Rect) -> BinaryMask {
    erode(&dilate(mask, se), se)
}
