//! Connected-component cleanup of the network's binary output: at most the
//! two largest ear regions survive.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::{BoundingBox, LabelMask};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "4" => Ok(Connectivity::Four),
            "8" => Ok(Connectivity::Eight),
            other => Err(Error::InvalidConfig(format!("connectivity must be 4 or 8, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Connectivity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Connectivity::Four => "4",
            Connectivity::Eight => "8",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub id: u32,
    pub pixel_count: usize,
    pub bbox: BoundingBox,
    /// First pixel of the region in raster order, as `(x, y)`.
    pub first_pixel: (usize, usize),
}

/// Region ids per pixel (0 = background) plus a table of regions; ids run
/// 1..=K in raster order of each region's first pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionLabeling {
    width: usize,
    height: usize,
    connectivity: Connectivity,
    labels: Vec<u32>,
    regions: Vec<Region>,
}

impl RegionLabeling {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    /// Mask of the pixels whose region id is in `keep`.
    pub fn mask_of(&self, keep: &[u32]) -> LabelMask {
        LabelMask::from_fn(self.width, self.height, |x, y| {
            let l = self.labels[y * self.width + x];
            l != 0 && keep.contains(&l)
        })
    }
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        let next = parent[a as usize];
        parent[a as usize] = parent[next as usize];
        a = next;
    }
    a
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let (ra, rb) = (find(parent, a), find(parent, b));
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Two-pass union-find labeling of the ear pixels.
pub fn connected_components(mask: &LabelMask, connectivity: Connectivity) -> RegionLabeling {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    // provisional label 0 is reserved for background
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !mask.is_ear(x, y) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut k = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbors[k] = l;
                    k += 1;
                }
            };
            if x > 0 {
                push(labels[y * w + x - 1]);
            }
            if y > 0 {
                push(labels[(y - 1) * w + x]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(labels[(y - 1) * w + x - 1]);
                    }
                    if x + 1 < w {
                        push(labels[(y - 1) * w + x + 1]);
                    }
                }
            }
            labels[y * w + x] = if k == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let mut root = neighbors[0];
                for &n in &neighbors[1..k] {
                    root = union(&mut parent, root, n);
                }
                find(&mut parent, root)
            };
        }
    }

    let mut final_id = vec![0u32; parent.len()];
    let mut regions: Vec<Region> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let root = find(&mut parent, l) as usize;
            if final_id[root] == 0 {
                regions.push(Region {
                    id: regions.len() as u32 + 1,
                    pixel_count: 0,
                    bbox: BoundingBox::new(x, y, 1, 1),
                    first_pixel: (x, y),
                });
                final_id[root] = regions.len() as u32;
            }
            let id = final_id[root];
            labels[y * w + x] = id;
            let r = &mut regions[id as usize - 1];
            r.pixel_count += 1;
            r.bbox.extend(x, y);
        }
    }
    RegionLabeling {
        width: w,
        height: h,
        connectivity,
        labels,
        regions,
    }
}

/// Ids of the (at most) two largest regions. Equal sizes go to the region
/// whose first pixel comes earlier in raster order.
pub fn two_largest(labeling: &RegionLabeling) -> Vec<u32> {
    let mut order: Vec<&Region> = labeling.regions.iter().collect();
    // ids are already in raster order of first pixel
    order.sort_by(|a, b| b.pixel_count.cmp(&a.pixel_count).then(a.id.cmp(&b.id)));
    order.iter().take(2).map(|r| r.id).collect()
}

pub fn keep_two_largest(labeling: &RegionLabeling) -> LabelMask {
    labeling.mask_of(&two_largest(labeling))
}

/// Ear wherever `p(ear) > 0.5` in batch item `item`; ties go to non-ear.
pub fn threshold<T: Scalar>(probabilities: &Tensor<T>, item: usize) -> Result<LabelMask> {
    let s = probabilities.shape();
    if s.c != 2 || item >= s.n {
        return Err(Error::shape(
            "threshold",
            format!("need a two-class probability map with item {item}, got {s}"),
        ));
    }
    let half = T::lit(0.5);
    Ok(LabelMask::from_fn(s.w, s.h, |x, y| probabilities.at(item, 1, y, x) > half))
}

/// Thresholds a single-item probability map and keeps the two largest regions.
pub fn postprocess<T: Scalar>(probabilities: &Tensor<T>, connectivity: Connectivity) -> Result<LabelMask> {
    if probabilities.shape().n != 1 {
        return Err(Error::shape(
            "postprocess",
            format!("expected a single probability map, got {}", probabilities.shape()),
        ));
    }
    Ok(postprocess_mask(&threshold(probabilities, 0)?, connectivity))
}

pub fn postprocess_mask(mask: &LabelMask, connectivity: Connectivity) -> LabelMask {
    keep_two_largest(&connected_components(mask, connectivity))
}
