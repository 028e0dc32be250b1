use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_JOINTS: usize = 15;
pub const FEATURE_DIM: usize = N_JOINTS * 3;

/// Ordered joint labels plus the joints and axis the event rules read.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSchema {
    pub joint_names: Vec<String>,
    pub lead_knee: String,
    pub throwing_wrist: String,
    pub vertical_axis: usize,
}

impl Default for JointSchema {
    /// Right-handed pitcher, z up.
    fn default() -> Self {
        let names = [
            "head",
            "l_shoulder",
            "r_shoulder",
            "l_elbow",
            "r_elbow",
            "l_wrist",
            "r_wrist",
            "l_hip",
            "r_hip",
            "l_knee",
            "r_knee",
            "l_heel",
            "r_heel",
            "l_toe",
            "r_toe",
        ];
        JointSchema {
            joint_names: names.iter().map(|s| s.to_string()).collect(),
            lead_knee: "l_knee".into(),
            throwing_wrist: "r_wrist".into(),
            vertical_axis: 2,
        }
    }
}

impl JointSchema {
    pub fn validate(&self) -> Result<()> {
        if self.joint_names.len() != N_JOINTS {
            return Err(Error::Config(format!(
                "joint schema needs {N_JOINTS} joints, got {}",
                self.joint_names.len()
            )));
        }
        for (i, n) in self.joint_names.iter().enumerate() {
            if self.joint_names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate joint name {n}")));
            }
        }
        self.joint_index(&self.lead_knee)?;
        self.joint_index(&self.throwing_wrist)?;
        if self.vertical_axis > 2 {
            return Err(Error::Config(format!("vertical axis {} not in 0..=2", self.vertical_axis)));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.joint_names.len() * 3
    }

    pub fn joint_index(&self, name: &str) -> Result<usize> {
        self.joint_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("joint {name} not in schema")))
    }

    /// Column range of a joint's x, y, z in a frame row.
    pub fn columns(&self, name: &str) -> Result<std::ops::Range<usize>> {
        let j = self.joint_index(name)?;
        Ok(3 * j..3 * j + 3)
    }

    /// `frame, <joint>_x, <joint>_y, <joint>_z, ...`
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["frame".to_string()];
        for n in &self.joint_names {
            for axis in ["x", "y", "z"] {
                h.push(format!("{n}_{axis}"));
            }
        }
        h
    }
}
