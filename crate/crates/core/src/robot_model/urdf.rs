//! Reader for the URDF subset we need: `robot`, `link`, and `joint` with
//! `origin`, `axis`, `parent`, `child` and `limit`. Everything else (visuals,
//! collision meshes, inertia, transmissions, ...) is skipped and reported as a
//! warning.

use std::collections::{HashMap, HashSet};

use nalgebra::Vector3;

use super::{JointKind, ModelError};
use crate::se3::Pose;

/// Limit used for `continuous` joints.
pub const CONTINUOUS_LIMIT: f64 = 1e9;

#[derive(Debug, Clone)]
pub struct UrdfJoint {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    pub origin: Pose,
    pub axis: Vector3<f64>,
    pub lower: f64,
    pub upper: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone)]
pub struct UrdfRobot {
    pub name: String,
    pub links: Vec<String>,
    pub joints: Vec<UrdfJoint>,
    pub warnings: Vec<String>,
    /// child link -> index into `joints`
    parent_joint: HashMap<String, usize>,
}

const LINK_CHILDREN_IGNORED: &[&str] = &["visual", "collision", "inertial"];

impl UrdfRobot {
    pub fn parse(xml_text: &str) -> Result<Self, ModelError> {
        let doc = roxmltree::Document::parse(xml_text).map_err(|e| {
            let pos = e.pos();
            ModelError::Xml {
                line: pos.row,
                column: pos.col,
                message: e.to_string(),
            }
        })?;
        let root = doc.root_element();
        if root.tag_name().name() != "robot" {
            return Err(ModelError::Structural(format!(
                "root element is <{}>, expected <robot>",
                root.tag_name().name()
            )));
        }
        let mut robot = UrdfRobot {
            name: root.attribute("name").unwrap_or("").to_string(),
            links: Vec::new(),
            joints: Vec::new(),
            warnings: Vec::new(),
            parent_joint: HashMap::new(),
        };
        let line_of = |node: roxmltree::Node| doc.text_pos_at(node.range().start).row;

        for node in root.children().filter(|n| n.is_element()) {
            match node.tag_name().name() {
                "link" => {
                    let name = required_attr(&node, "name", line_of(node))?;
                    if robot.links.iter().any(|l| l == name) {
                        return Err(ModelError::Structural(format!("duplicate link '{name}'")));
                    }
                    for child in node.children().filter(|n| n.is_element()) {
                        let tag = child.tag_name().name();
                        if LINK_CHILDREN_IGNORED.contains(&tag) {
                            for d in child
                                .descendants()
                                .filter(|n| n.is_element() && n.tag_name().name() == "mesh")
                            {
                                robot.warnings.push(format!(
                                    "ignored <mesh> '{}' in link '{name}' (line {})",
                                    d.attribute("filename").unwrap_or(""),
                                    line_of(d)
                                ));
                            }
                        }
                        robot.warnings.push(format!(
                            "ignored <{tag}> in link '{name}' (line {})",
                            line_of(child)
                        ));
                    }
                    robot.links.push(name.to_string());
                }
                "joint" => {
                    let joint = parse_joint(&node, &mut robot.warnings, &line_of)?;
                    robot.joints.push(joint);
                }
                other => robot
                    .warnings
                    .push(format!("ignored <{other}> (line {})", line_of(node))),
            }
        }
        robot.check_structure()?;
        Ok(robot)
    }

    fn check_structure(&mut self) -> Result<(), ModelError> {
        let links: HashSet<&str> = self.links.iter().map(String::as_str).collect();
        let mut names = HashSet::new();
        for (i, j) in self.joints.iter().enumerate() {
            if !names.insert(j.name.as_str()) {
                return Err(ModelError::Structural(format!(
                    "duplicate joint '{}'",
                    j.name
                )));
            }
            for link in [&j.parent, &j.child] {
                if !links.contains(link.as_str()) {
                    return Err(ModelError::Structural(format!(
                        "joint '{}' references unknown link '{link}'",
                        j.name
                    )));
                }
            }
            if self.parent_joint.insert(j.child.clone(), i).is_some() {
                return Err(ModelError::Structural(format!(
                    "link '{}' has more than one parent joint",
                    j.child
                )));
            }
        }
        // With at most one parent per link, any cycle shows up as a walk that
        // never reaches a root.
        for link in &self.links {
            let mut seen = HashSet::new();
            let mut cur = link.as_str();
            while let Some(&j) = self.parent_joint.get(cur) {
                if !seen.insert(cur) {
                    return Err(ModelError::Structural(format!(
                        "cyclic joint graph through link '{link}'"
                    )));
                }
                cur = &self.joints[j].parent;
            }
        }
        Ok(())
    }

    pub fn has_link(&self, name: &str) -> bool {
        self.links.iter().any(|l| l == name)
    }

    pub fn joint(&self, name: &str) -> Option<&UrdfJoint> {
        self.joints.iter().find(|j| j.name == name)
    }

    pub fn parent_joint(&self, link: &str) -> Option<&UrdfJoint> {
        self.parent_joint.get(link).map(|&i| &self.joints[i])
    }

    /// Joints from `base` down to `tip`, in base-to-tip order.
    pub fn path(&self, base: &str, tip: &str) -> Result<Vec<&UrdfJoint>, ModelError> {
        for link in [base, tip] {
            if !self.has_link(link) {
                return Err(ModelError::ChainExtraction(link.to_string()));
            }
        }
        let mut out = Vec::new();
        let mut cur = tip;
        while cur != base {
            match self.parent_joint(cur) {
                Some(j) => {
                    out.push(j);
                    cur = &j.parent;
                }
                None => {
                    return Err(ModelError::ChainExtraction(format!(
                        "{tip} is not below {base}"
                    )))
                }
            }
        }
        out.reverse();
        Ok(out)
    }

    pub fn root_link(&self) -> Option<&str> {
        self.links
            .iter()
            .find(|l| !self.parent_joint.contains_key(l.as_str()))
            .map(String::as_str)
    }
}

fn required_attr<'a>(
    node: &roxmltree::Node<'a, '_>,
    attr: &str,
    line: u32,
) -> Result<&'a str, ModelError> {
    node.attribute(attr).ok_or_else(|| {
        ModelError::Structural(format!(
            "<{}> at line {line} is missing attribute '{attr}'",
            node.tag_name().name()
        ))
    })
}

fn parse_floats<const N: usize>(text: &str, what: &str) -> Result<[f64; N], ModelError> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(str::parse::<f64>)
        .collect::<Result<_, _>>()
        .map_err(|e| ModelError::Structural(format!("bad number in {what} '{text}': {e}")))?;
    values
        .try_into()
        .map_err(|_| ModelError::Structural(format!("{what} '{text}' needs {N} numbers")))
}

fn parse_number(
    node: &roxmltree::Node,
    attr: &str,
    joint: &str,
) -> Result<Option<f64>, ModelError> {
    node.attribute(attr)
        .map(|v| {
            v.trim().parse::<f64>().map_err(|e| {
                ModelError::Structural(format!("joint '{joint}': bad {attr} '{v}': {e}"))
            })
        })
        .transpose()
}

fn parse_joint(
    node: &roxmltree::Node,
    warnings: &mut Vec<String>,
    line_of: &dyn Fn(roxmltree::Node) -> u32,
) -> Result<UrdfJoint, ModelError> {
    let line = line_of(*node);
    let name = required_attr(node, "name", line)?.to_string();
    let type_str = required_attr(node, "type", line)?;
    let kind = match type_str {
        "revolute" | "continuous" => JointKind::Revolute,
        "prismatic" => JointKind::Prismatic,
        "fixed" => JointKind::Fixed,
        other => {
            return Err(ModelError::UnsupportedJoint {
                joint: name,
                kind: other.to_string(),
            })
        }
    };
    let mut parent = None;
    let mut child = None;
    let mut origin = Pose::identity();
    let mut axis = Vector3::x();
    let mut limit = None;
    for c in node.children().filter(|n| n.is_element()) {
        let l = line_of(c);
        match c.tag_name().name() {
            "parent" => parent = Some(required_attr(&c, "link", l)?.to_string()),
            "child" => child = Some(required_attr(&c, "link", l)?.to_string()),
            "origin" => {
                let xyz = c
                    .attribute("xyz")
                    .map(|t| parse_floats::<3>(t, "xyz"))
                    .transpose()?;
                let rpy = c
                    .attribute("rpy")
                    .map(|t| parse_floats::<3>(t, "rpy"))
                    .transpose()?;
                origin = Pose::from_xyz_rpy(xyz.unwrap_or_default(), rpy.unwrap_or_default());
            }
            "axis" => {
                let a = parse_floats::<3>(required_attr(&c, "xyz", l)?, "axis")?;
                axis = Vector3::new(a[0], a[1], a[2]);
            }
            "limit" => {
                limit = Some((
                    parse_number(&c, "lower", &name)?,
                    parse_number(&c, "upper", &name)?,
                    parse_number(&c, "velocity", &name)?,
                ))
            }
            other => warnings.push(format!("ignored <{other}> in joint '{name}' (line {l})")),
        }
    }
    let parent =
        parent.ok_or_else(|| ModelError::Structural(format!("joint '{name}' has no <parent>")))?;
    let child =
        child.ok_or_else(|| ModelError::Structural(format!("joint '{name}' has no <child>")))?;

    let (lower, upper, velocity) = match (kind, type_str) {
        (JointKind::Fixed, _) => (0.0, 0.0, f64::INFINITY),
        (_, "continuous") => {
            let velocity = limit.and_then(|l| l.2);
            (
                -CONTINUOUS_LIMIT,
                CONTINUOUS_LIMIT,
                velocity.unwrap_or(f64::NAN),
            )
        }
        _ => {
            let (lo, hi, v) = limit
                .ok_or_else(|| ModelError::Structural(format!("joint '{name}' has no <limit>")))?;
            (lo.unwrap_or(0.0), hi.unwrap_or(0.0), v.unwrap_or(f64::NAN))
        }
    };
    if kind != JointKind::Fixed {
        let n = axis.norm();
        if !(n.is_finite() && n > 1e-12) {
            return Err(ModelError::Structural(format!(
                "joint '{name}' has a zero axis"
            )));
        }
        axis /= n;
        if !(lower <= upper) {
            return Err(ModelError::Structural(format!(
                "joint '{name}': lower limit {lower} exceeds upper limit {upper}"
            )));
        }
        if !(velocity > 0.0) {
            return Err(ModelError::Structural(format!(
                "joint '{name}': velocity limit must be positive"
            )));
        }
    }
    Ok(UrdfJoint {
        name,
        kind,
        parent,
        child,
        origin,
        axis,
        lower,
        upper,
        velocity,
    })
}
