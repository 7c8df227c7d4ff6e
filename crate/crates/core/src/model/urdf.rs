//! Ingestion of the URDF subset: links with inertial mass and COM, joints
//! with origin, axis and limits, plus the `<frame>` element and the
//! `floating="true"` robot attribute.

use std::collections::HashMap;

use log::warn;
use roxmltree::{Document, Node};

use super::{Frame, Joint, JointKind, JointLimits, Link, RobotModel};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

pub fn parse_robot_description(text: &str) -> Result<RobotModel> {
    let doc = Document::parse(text).map_err(|e| Error::Xml(e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(Error::InvalidElement {
            path: robot.tag_name().name().to_string(),
            msg: "root element must be <robot>".into(),
        });
    }
    let name = robot.attribute("name").unwrap_or("robot").to_string();
    let floating = match robot.attribute("floating") {
        None | Some("false") => false,
        Some("true") => true,
        Some(other) => {
            return Err(Error::InvalidElement {
                path: "robot".into(),
                msg: format!("floating must be true or false, got `{other}`"),
            })
        }
    };
    let mut warnings = Vec::new();

    let mut links = Vec::new();
    let mut link_index = HashMap::new();
    for node in robot.children().filter(Node::is_element) {
        if node.tag_name().name() == "link" {
            let link = parse_link(node, &mut warnings)?;
            if link_index.insert(link.name.clone(), links.len()).is_some() {
                return Err(Error::InvalidElement {
                    path: format!("robot/link[{}]", link.name),
                    msg: "duplicate link name".into(),
                });
            }
            links.push(link);
        }
    }

    let mut joints = Vec::new();
    let mut frames = Vec::new();
    for node in robot.children().filter(Node::is_element) {
        match node.tag_name().name() {
            "link" => {}
            "joint" => joints.push(parse_joint(node, &link_index, &mut warnings)?),
            "frame" => {
                let fname = required(node, "name", "robot/frame")?;
                let path = format!("robot/frame[{fname}]");
                let parent = required(node, "parent", &path)?;
                let link = *link_index.get(parent).ok_or_else(|| Error::UnknownParent {
                    path: path.clone(),
                    link: parent.to_string(),
                })?;
                frames.push(Frame {
                    name: fname.to_string(),
                    link,
                    origin: parse_origin_attrs(node, &path)?,
                });
            }
            other => note(&mut warnings, format!("robot/{other}: element ignored")),
        }
    }

    let mut model = RobotModel::new(name, links, joints, frames, floating)?;
    model.warnings = warnings;
    Ok(model)
}

fn note(warnings: &mut Vec<String>, msg: String) {
    warn!("{msg}");
    warnings.push(msg);
}

fn required<'a>(node: Node<'a, '_>, attr: &str, path: &str) -> Result<&'a str> {
    node.attribute(attr).ok_or_else(|| Error::InvalidElement {
        path: path.to_string(),
        msg: format!("missing attribute `{attr}`"),
    })
}

fn parse_f64(s: &str, path: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::InvalidElement {
        path: path.to_string(),
        msg: format!("not a number: `{s}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::InvalidElement {
            path: path.to_string(),
            msg: format!("non-finite value `{s}`"),
        });
    }
    Ok(v)
}

fn parse_vec3(s: &str, path: &str) -> Result<Vec3> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::InvalidElement {
            path: path.to_string(),
            msg: format!("expected three numbers, got `{s}`"),
        });
    }
    Ok(Vec3::new(
        parse_f64(parts[0], path)?,
        parse_f64(parts[1], path)?,
        parse_f64(parts[2], path)?,
    ))
}

fn parse_origin_attrs(node: Node, path: &str) -> Result<Pose> {
    let xyz = match node.attribute("xyz") {
        Some(s) => parse_vec3(s, path)?,
        None => Vec3::zeros(),
    };
    let rpy = match node.attribute("rpy") {
        Some(s) => parse_vec3(s, path)?,
        None => Vec3::zeros(),
    };
    Ok(Pose::from_xyz_rpy(xyz, rpy))
}

fn child<'a, 'i>(node: Node<'a, 'i>, tag: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.is_element() && c.tag_name().name() == tag)
}

fn parse_link(node: Node, warnings: &mut Vec<String>) -> Result<Link> {
    let name = required(node, "name", "robot/link")?.to_string();
    let path = format!("robot/link[{name}]");
    let mut mass = None;
    let mut com = Vec3::zeros();
    for c in node.children().filter(Node::is_element) {
        match c.tag_name().name() {
            "inertial" => {
                let ipath = format!("{path}/inertial");
                for ic in c.children().filter(Node::is_element) {
                    match ic.tag_name().name() {
                        "mass" => {
                            let mpath = format!("{ipath}/mass");
                            mass = Some(parse_f64(required(ic, "value", &mpath)?, &mpath)?);
                        }
                        "origin" => {
                            let opath = format!("{ipath}/origin");
                            com = parse_origin_attrs(ic, &opath)?.position;
                        }
                        other => note(warnings, format!("{ipath}/{other}: element ignored")),
                    }
                }
            }
            other => note(warnings, format!("{path}/{other}: element ignored")),
        }
    }
    let mass = mass.ok_or_else(|| Error::InvalidElement {
        path: format!("{path}/inertial/mass"),
        msg: "every link needs a positive mass".into(),
    })?;
    Ok(Link { name, mass, com })
}

fn parse_joint(node: Node, link_index: &HashMap<String, usize>, warnings: &mut Vec<String>) -> Result<Joint> {
    let name = required(node, "name", "robot/joint")?.to_string();
    let path = format!("robot/joint[{name}]");
    let kind = match required(node, "type", &path)? {
        "revolute" => JointKind::Revolute,
        "prismatic" => JointKind::Prismatic,
        "fixed" => JointKind::Fixed,
        other => {
            return Err(Error::InvalidElement {
                path,
                msg: format!("unsupported joint type `{other}`"),
            })
        }
    };
    let link_ref = |tag: &str| -> Result<usize> {
        let p = format!("{path}/{tag}");
        let n = child(node, tag).ok_or_else(|| Error::InvalidElement {
            path: p.clone(),
            msg: "missing element".into(),
        })?;
        let l = required(n, "link", &p)?;
        link_index.get(l).copied().ok_or_else(|| Error::UnknownParent {
            path: p.clone(),
            link: l.to_string(),
        })
    };
    let parent = link_ref("parent")?;
    let child_link = link_ref("child")?;

    let mut origin = Pose::identity();
    let mut axis = Vec3::new(1.0, 0.0, 0.0);
    let mut limits = None;
    for c in node.children().filter(Node::is_element) {
        let cpath = format!("{path}/{}", c.tag_name().name());
        match c.tag_name().name() {
            "parent" | "child" => {}
            "origin" => origin = parse_origin_attrs(c, &cpath)?,
            "axis" => {
                let a = parse_vec3(required(c, "xyz", &cpath)?, &cpath)?;
                let n = a.norm();
                if n < 1e-9 {
                    return Err(Error::InvalidElement {
                        path: cpath,
                        msg: "zero axis".into(),
                    });
                }
                axis = a / n;
            }
            "limit" => {
                let get = |attr: &str| -> Result<f64> { parse_f64(required(c, attr, &cpath)?, &cpath) };
                limits = Some(JointLimits {
                    lower: get("lower")?,
                    upper: get("upper")?,
                    velocity: get("velocity")?,
                    effort: get("effort")?,
                });
            }
            other => note(warnings, format!("{path}/{other}: element ignored")),
        }
    }
    Ok(Joint {
        name,
        kind,
        parent,
        child: child_link,
        origin,
        axis,
        limits: if kind == JointKind::Fixed { None } else { limits },
        dof: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_JOINT: &str = r#"<robot name="one">
      <link name="base"><inertial><mass value="1"/></inertial></link>
      <link name="arm"><inertial><mass value="2"/><origin xyz="0.5 0 0"/></inertial><visual/></link>
      <joint name="j" type="revolute">
        <parent link="base"/><child link="arm"/>
        <axis xyz="0 0 1"/>
        <limit lower="-1.5" upper="1.5" velocity="2" effort="50"/>
      </joint>
      <frame name="tip" parent="arm" xyz="1 0 0"/>
    </robot>"#;

    #[test]
    fn single_joint_maps_fields() {
        let m = parse_robot_description(ONE_JOINT).unwrap();
        assert_eq!(m.dof(), 1);
        assert!(!m.floating_base);
        let l = m.dof_limits()[0];
        assert_eq!((l.lower, l.upper), (-1.5, 1.5));
        assert_eq!(m.links[1].mass, 2.0);
        assert_eq!(m.links[1].com, Vec3::new(0.5, 0.0, 0.0));
        assert!(m.has_frame("tip") && m.has_frame("arm"));
        assert_eq!(m.warnings.len(), 1, "visual element should be reported");
    }

    #[test]
    fn cycle_is_detected() {
        let text = r#"<robot name="c">
          <link name="a"><inertial><mass value="1"/></inertial></link>
          <link name="b"><inertial><mass value="1"/></inertial></link>
          <link name="root"><inertial><mass value="1"/></inertial></link>
          <joint name="j1" type="fixed"><parent link="a"/><child link="b"/></joint>
          <joint name="j2" type="fixed"><parent link="b"/><child link="a"/></joint>
        </robot>"#;
        assert!(matches!(parse_robot_description(text), Err(Error::Cycle { .. })));
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(parse_robot_description("<robot><link"), Err(Error::Xml(_))));

        let no_limit = ONE_JOINT.replace(r#"<limit lower="-1.5" upper="1.5" velocity="2" effort="50"/>"#, "");
        match parse_robot_description(&no_limit) {
            Err(Error::MissingLimit { path, .. }) => assert_eq!(path, "robot/joint[j]"),
            other => panic!("unexpected {other:?}"),
        }

        let bad_parent = ONE_JOINT.replace(r#"<parent link="base"/>"#, r#"<parent link="nope"/>"#);
        match parse_robot_description(&bad_parent) {
            Err(Error::UnknownParent { path, link }) => {
                assert_eq!(path, "robot/joint[j]/parent");
                assert_eq!(link, "nope");
            }
            other => panic!("unexpected {other:?}"),
        }

        let inverted = ONE_JOINT.replace(r#"lower="-1.5" upper="1.5""#, r#"lower="1.5" upper="-1.5""#);
        assert!(matches!(
            parse_robot_description(&inverted),
            Err(Error::InvalidElement { .. })
        ));

        let massless = ONE_JOINT.replace(r#"<mass value="1"/>"#, r#"<mass value="0"/>"#);
        assert!(matches!(
            parse_robot_description(&massless),
            Err(Error::InvalidElement { .. })
        ));
    }
}
