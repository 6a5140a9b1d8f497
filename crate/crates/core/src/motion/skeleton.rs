use crate::error::{Error, Result};

/// Joint hierarchy with a left/right mirror map.
///
/// Joint 0 is always the root. Its three motion channels carry the global
/// root translation; every other joint is stored root-relative.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    symmetry: Vec<usize>,
    bones: Vec<(usize, usize)>,
}

impl Skeleton {
    /// Builds and validates a skeleton. `parents[j] < 0` marks the root.
    pub fn new(joint_names: Vec<String>, parents: &[i64], symmetry: Vec<usize>) -> Result<Self> {
        let j = parents.len();
        if j == 0 {
            return Err(Error::param("skeleton needs at least one joint"));
        }
        if joint_names.len() != j || symmetry.len() != j {
            return Err(Error::dim(format!(
                "skeleton arrays disagree: {} names, {} parents, {} symmetry entries",
                joint_names.len(),
                j,
                symmetry.len()
            )));
        }
        let mut parent_idx = Vec::with_capacity(j);
        for (i, &p) in parents.iter().enumerate() {
            if p < 0 {
                parent_idx.push(None);
            } else if (p as usize) < j && p as usize != i {
                parent_idx.push(Some(p as usize));
            } else {
                return Err(Error::param(format!("joint {i} has invalid parent {p}")));
            }
        }
        let roots: Vec<usize> = (0..j).filter(|&i| parent_idx[i].is_none()).collect();
        if roots != [0] {
            return Err(Error::param(format!(
                "skeleton must have exactly one root at joint 0, found roots {roots:?}"
            )));
        }
        for start in 0..j {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parent_idx[cur] {
                cur = p;
                steps += 1;
                if steps > j {
                    return Err(Error::param(format!("cycle through joint {start}")));
                }
            }
        }
        for (i, &s) in symmetry.iter().enumerate() {
            if s >= j || symmetry[s] != i {
                return Err(Error::param(format!(
                    "symmetry map is not an involution at joint {i}"
                )));
            }
        }
        let bones = (1..j).map(|c| (c, parent_idx[c].unwrap())).collect();
        Ok(Skeleton {
            joint_names,
            parents: parent_idx,
            symmetry,
            bones,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn channels(&self) -> usize {
        3 * self.joint_count()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    /// Parent indices with `-1` for the root, as stored on disk.
    pub fn parents_signed(&self) -> Vec<i64> {
        self.parents
            .iter()
            .map(|p| p.map_or(-1, |v| v as i64))
            .collect()
    }

    pub fn mirror(&self, joint: usize) -> usize {
        self.symmetry[joint]
    }

    pub fn symmetry(&self) -> &[usize] {
        &self.symmetry
    }

    /// `(child, parent)` pairs, one per non-root joint, ordered by child.
    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    /// Index of the bone whose endpoints are the mirror images of `bone`'s.
    pub fn mirrored_bone(&self, bone: usize) -> Option<usize> {
        let (c, p) = self.bones[bone];
        let target = (self.mirror(c), self.mirror(p));
        self.bones
            .iter()
            .position(|&b| b == target || b == (target.1, target.0))
    }

    /// Unordered pairs `(b, b')`, `b < b'`, of distinct mirrored bones.
    pub fn symmetric_bone_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.bones.len())
            .filter_map(|b| match self.mirrored_bone(b) {
                Some(m) if m > b => Some((b, m)),
                _ => None,
            })
            .collect()
    }

    /// 8-joint symmetric biped: pelvis, chest, two arms of two segments,
    /// two legs of one segment.
    pub fn toy8() -> Self {
        let names = [
            "pelvis", "chest", "l_elbow", "l_hand", "r_elbow", "r_hand", "l_foot", "r_foot",
        ];
        Skeleton::new(
            names.iter().map(|s| s.to_string()).collect(),
            &[-1, 0, 1, 2, 1, 4, 0, 0],
            vec![0, 1, 4, 5, 2, 3, 7, 6],
        )
        .expect("toy8 preset is valid")
    }

    /// 24-joint body tree in the common SMPL ordering.
    pub fn body24() -> Self {
        let names = [
            "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle",
            "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head",
            "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand",
            "r_hand",
        ];
        let parents = [
            -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
        ];
        let symmetry = vec![
            0, 2, 1, 3, 5, 4, 6, 8, 7, 9, 11, 10, 12, 14, 13, 15, 17, 16, 19, 18, 21, 20, 23, 22,
        ];
        Skeleton::new(
            names.iter().map(|s| s.to_string()).collect(),
            &parents,
            symmetry,
        )
        .expect("body24 preset is valid")
    }

    /// Resolves a preset by name (`toy8` or `body24`).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy8" => Ok(Skeleton::toy8()),
            "body24" => Ok(Skeleton::body24()),
            other => Err(Error::param(format!("unknown skeleton preset `{other}`"))),
        }
    }
}
