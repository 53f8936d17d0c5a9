use super::{LabelMap, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    /// Neighbor offsets already visited in a raster scan.
    fn causal_offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, 0), (-1, -1), (0, -1), (1, -1)],
        }
    }

    pub fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Result of labeling: component IDs start at 1 and follow the raster-scan
/// order of each component's first pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub labels: LabelMap,
    pub count: usize,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra != rb {
        // Keep the older (smaller) provisional label as root.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labeling of maximal equal-valued connected sets.
pub fn connected_components<T>(img: &Raster<T>, connectivity: Connectivity) -> Components
where
    T: Copy + PartialEq,
{
    let (w, h) = img.dims();
    let mut provisional = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            let v = img.get(x, y);
            let mut assigned = 0u32;
            for &(dx, dy) in connectivity.causal_offsets() {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if img.get(nx, ny) != v {
                    continue;
                }
                let nl = provisional[ny * w + nx];
                if assigned == 0 {
                    assigned = nl;
                } else {
                    union(&mut parent, assigned, nl);
                }
            }
            if assigned == 0 {
                assigned = parent.len() as u32;
                parent.push(assigned);
            }
            provisional[y * w + x] = assigned;
        }
    }

    let mut remap = vec![0u32; parent.len()];
    let mut next = 0u32;
    let mut out = vec![0u32; w * h];
    for (i, &p) in provisional.iter().enumerate() {
        let root = find(&mut parent, p) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        out[i] = remap[root];
    }
    Components {
        labels: Raster::new(w, h, 1, out).expect("same dims"),
        count: next as usize,
    }
}
