//! Index maps for the model's data movement: patch flattening, window
//! partitioning, cyclic shifts, head splitting, and patch-merge
//! neighborhoods. Every rearrangement is a row gather with a precomputed
//! map, so each has an exact inverse and a cheap scatter-add backward.

use std::rc::Rc;

use crate::error::{Error, Result};

/// Pixel-row order that flattens non-overlapping `p x p` patches: gathering
/// `[H*W, 3]` pixel rows with this map and reshaping yields
/// `[(H/p)*(W/p), p*p*3]` tokens.
pub fn patch_pixel_rows(h: usize, w: usize, p: usize) -> Rc<[u32]> {
    let mut idx = Vec::with_capacity(h * w);
    for gy in 0..h / p {
        for gx in 0..w / p {
            for iy in 0..p {
                for ix in 0..p {
                    idx.push(((gy * p + iy) * w + (gx * p + ix)) as u32);
                }
            }
        }
    }
    idx.into()
}

/// Token rows in window-major order: window (wy, wx), then row-major within
/// the window.
pub fn window_partition_rows(hs: usize, ws: usize, win: usize) -> Result<Rc<[u32]>> {
    if !hs.is_multiple_of(win) || !ws.is_multiple_of(win) {
        return Err(Error::Config(format!(
            "grid {hs}x{ws} not divisible by window {win}"
        )));
    }
    let mut idx = Vec::with_capacity(hs * ws);
    for wy in 0..hs / win {
        for wx in 0..ws / win {
            for iy in 0..win {
                for ix in 0..win {
                    idx.push(((wy * win + iy) * ws + (wx * win + ix)) as u32);
                }
            }
        }
    }
    Ok(idx.into())
}

/// Exact inverse of [`window_partition_rows`].
pub fn window_reverse_rows(hs: usize, ws: usize, win: usize) -> Result<Rc<[u32]>> {
    let fwd = window_partition_rows(hs, ws, win)?;
    Ok(invert(&fwd))
}

/// Toroidal roll of an `hs x ws` grid: with positive `offset` the content
/// moves down-right, so output position (r, c) takes the value from
/// (r - offset, c - offset) modulo the grid. `cyclic_shift_rows(-o)`
/// composed with `cyclic_shift_rows(o)` is the identity.
pub fn cyclic_shift_rows(hs: usize, ws: usize, offset: i64) -> Rc<[u32]> {
    let mut idx = Vec::with_capacity(hs * ws);
    for r in 0..hs as i64 {
        for c in 0..ws as i64 {
            let sr = (r - offset).rem_euclid(hs as i64);
            let sc = (c - offset).rem_euclid(ws as i64);
            idx.push((sr * ws as i64 + sc) as u32);
        }
    }
    idx.into()
}

/// One of the four 2x2-neighborhood sub-grids feeding patch merging, in
/// reading order: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
pub fn merge_neighbor_rows(hs: usize, ws: usize, which: usize) -> Result<Rc<[u32]>> {
    if !hs.is_multiple_of(2) || !ws.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "grid {hs}x{ws} is odd and cannot be merged"
        )));
    }
    let (dy, dx) = [(0, 0), (0, 1), (1, 0), (1, 1)][which];
    let mut idx = Vec::with_capacity(hs * ws / 4);
    for y in 0..hs / 2 {
        for x in 0..ws / 2 {
            idx.push(((2 * y + dy) * ws + (2 * x + dx)) as u32);
        }
    }
    Ok(idx.into())
}

/// Rows of width `head_dim` that turn `[nw*n, heads*head_dim]` into
/// `[nw, heads, n, head_dim]`.
pub fn head_split_rows(nw: usize, n: usize, heads: usize) -> Rc<[u32]> {
    let mut idx = Vec::with_capacity(nw * n * heads);
    for w in 0..nw {
        for h in 0..heads {
            for t in 0..n {
                idx.push(((w * n + t) * heads + h) as u32);
            }
        }
    }
    idx.into()
}

/// Inverse of [`head_split_rows`].
pub fn head_merge_rows(nw: usize, n: usize, heads: usize) -> Rc<[u32]> {
    invert(&head_split_rows(nw, n, heads))
}

fn invert(map: &Rc<[u32]>) -> Rc<[u32]> {
    let mut inv = vec![0u32; map.len()];
    for (i, &src) in map.iter().enumerate() {
        inv[src as usize] = i as u32;
    }
    inv.into()
}

/// Large negative logit standing in for minus infinity; it underflows to an
/// exact zero attention weight without breaking the finite-value guards.
pub const MASK_NEG: f32 = -1e9;

/// Additive attention mask `[nw, n, n]` for a grid rolled up-left by
/// `shift`: window-mate pairs whose source regions are separated by the
/// roll seam get [`MASK_NEG`]. Regions are the four wrap quadrants, which
/// coincides with the usual three-slice labeling when `shift < win` and
/// stays valid for larger shifts. Returns `None` when no pair is masked.
pub fn boundary_mask(hs: usize, ws: usize, win: usize, shift: usize) -> Result<Option<Vec<f32>>> {
    if shift == 0 {
        return Ok(None);
    }
    let s = shift % hs;
    if s == 0 || s.is_multiple_of(win) {
        // The roll permutes whole windows; nothing crosses a seam.
        return Ok(None);
    }
    // Rolled position r holds original row (r + s) mod hs; it wrapped iff
    // r >= hs - s. Same along columns.
    let region = |r: usize, c: usize| -> u8 {
        let row_wrapped = r >= hs - s;
        let col_wrapped = c >= ws - (shift % ws);
        (row_wrapped as u8) << 1 | col_wrapped as u8
    };
    let part = window_partition_rows(hs, ws, win)?;
    let n = win * win;
    let nw = hs * ws / n;
    let mut mask = vec![0.0f32; nw * n * n];
    let mut any = false;
    for w in 0..nw {
        let rows = &part[w * n..(w + 1) * n];
        for i in 0..n {
            let (ri, ci) = ((rows[i] as usize) / ws, (rows[i] as usize) % ws);
            for j in 0..n {
                let (rj, cj) = ((rows[j] as usize) / ws, (rows[j] as usize) % ws);
                if region(ri, ci) != region(rj, cj) {
                    mask[(w * n + i) * n + j] = MASK_NEG;
                    any = true;
                }
            }
        }
    }
    Ok(if any { Some(mask) } else { None })
}

/// Relative-position index `[n, n]` into a `(2*win-1)^2` bias table.
pub fn relative_position_index(win: usize) -> Vec<u32> {
    let n = win * win;
    let side = 2 * win - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (iy, ix) = (i / win, i % win);
        for j in 0..n {
            let (jy, jx) = (j / win, j % win);
            let dy = iy as i64 - jy as i64 + win as i64 - 1;
            let dx = ix as i64 - jx as i64 + win as i64 - 1;
            idx.push((dy * side as i64 + dx) as u32);
        }
    }
    idx
}
