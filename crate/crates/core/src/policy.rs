//! Threshold access trees and their text form.
//!
//! ```text
//! policy := thresh(<t>, policy, ...) | and(policy, ...) | or(policy, ...) | attr
//! attr   := attr<k> | <k>
//! ```
//!
//! `and` is n-of-n and `or` is 1-of-n. Attributes are indices into the ABE
//! universe. The canonical rendering always uses `thresh` and `attr<k>`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

pub type AttributeId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("invalid threshold {threshold}-of-{children}")]
    InvalidThreshold { threshold: usize, children: usize },
    #[error("attribute {attr} outside universe of size {universe}")]
    OutsideUniverse { attr: AttributeId, universe: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PolicyNode {
    Leaf(AttributeId),
    Threshold {
        threshold: usize,
        children: Vec<PolicyNode>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AccessPolicy {
    root: PolicyNode,
}

impl AccessPolicy {
    /// Builds a policy, checking `1 <= t <= n` at every internal node.
    pub fn new(root: PolicyNode) -> Result<Self, PolicyError> {
        check_thresholds(&root)?;
        Ok(Self { root })
    }

    pub fn leaf(attr: AttributeId) -> Self {
        Self {
            root: PolicyNode::Leaf(attr),
        }
    }

    pub fn threshold(threshold: usize, children: Vec<AccessPolicy>) -> Result<Self, PolicyError> {
        Self::new(PolicyNode::Threshold {
            threshold,
            children: children.into_iter().map(|p| p.root).collect(),
        })
    }

    pub fn parse(text: &str) -> Result<Self, PolicyError> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
        };
        let root = p.node()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Self::new(root)
    }

    pub fn root(&self) -> &PolicyNode {
        &self.root
    }

    pub fn validate_universe(&self, universe: u32) -> Result<(), PolicyError> {
        for attr in self.leaves() {
            if attr >= universe {
                return Err(PolicyError::OutsideUniverse { attr, universe });
            }
        }
        Ok(())
    }

    /// Leaf attributes in depth-first order (the order key shares are stored in).
    pub fn leaves(&self) -> Vec<AttributeId> {
        fn walk(n: &PolicyNode, out: &mut Vec<AttributeId>) {
            match n {
                PolicyNode::Leaf(a) => out.push(*a),
                PolicyNode::Threshold { children, .. } => {
                    children.iter().for_each(|c| walk(c, out))
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn is_satisfied_by(&self, attrs: &BTreeSet<AttributeId>) -> bool {
        fn sat(n: &PolicyNode, attrs: &BTreeSet<AttributeId>) -> bool {
            match n {
                PolicyNode::Leaf(a) => attrs.contains(a),
                PolicyNode::Threshold {
                    threshold,
                    children,
                } => children.iter().filter(|c| sat(c, attrs)).count() >= *threshold,
            }
        }
        sat(&self.root, attrs)
    }
}

fn check_thresholds(n: &PolicyNode) -> Result<(), PolicyError> {
    if let PolicyNode::Threshold {
        threshold,
        children,
    } = n
    {
        if *threshold == 0 || *threshold > children.len() {
            return Err(PolicyError::InvalidThreshold {
                threshold: *threshold,
                children: children.len(),
            });
        }
        children.iter().try_for_each(check_thresholds)?;
    }
    Ok(())
}

impl fmt::Display for PolicyNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyNode::Leaf(a) => write!(f, "attr{a}"),
            PolicyNode::Threshold {
                threshold,
                children,
            } => {
                write!(f, "thresh({threshold}")?;
                for c in children {
                    write!(f, ", {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for AccessPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl std::str::FromStr for AccessPolicy {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> PolicyError {
        PolicyError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), PolicyError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn ident(&mut self) -> &str {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).expect("ascii")
    }

    fn number(&mut self) -> Result<u64, PolicyError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a number"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii")
            .parse()
            .map_err(|_| PolicyError::Parse {
                pos: start,
                msg: "number out of range".into(),
            })
    }

    fn attribute(&mut self, n: u64, at: usize) -> Result<PolicyNode, PolicyError> {
        u32::try_from(n)
            .map(PolicyNode::Leaf)
            .map_err(|_| PolicyError::Parse {
                pos: at,
                msg: "attribute id out of range".into(),
            })
    }

    fn node(&mut self) -> Result<PolicyNode, PolicyError> {
        let start = {
            self.skip_ws();
            self.pos
        };
        match self.peek() {
            Some(c) if c.is_ascii_digit() => {
                let n = self.number()?;
                self.attribute(n, start)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let word = self.ident().to_string();
                match word.as_str() {
                    "attr" => {
                        let n = self.number()?;
                        self.attribute(n, start)
                    }
                    "thresh" => {
                        self.expect(b'(')?;
                        let t = self.number()? as usize;
                        self.expect(b',')?;
                        let children = self.list()?;
                        Ok(PolicyNode::Threshold {
                            threshold: t,
                            children,
                        })
                    }
                    "and" | "or" => {
                        self.expect(b'(')?;
                        let children = self.list()?;
                        let threshold = if word == "and" { children.len() } else { 1 };
                        Ok(PolicyNode::Threshold {
                            threshold,
                            children,
                        })
                    }
                    _ => Err(PolicyError::Parse {
                        pos: start,
                        msg: format!("unknown keyword '{word}'"),
                    }),
                }
            }
            Some(_) => Err(self.err("expected a policy")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    /// Parses `node (, node)* )`.
    fn list(&mut self) -> Result<Vec<PolicyNode>, PolicyError> {
        let mut out = vec![self.node()?];
        loop {
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    out.push(self.node()?);
                }
                Some(b')') => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.err("expected ',' or ')'")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_forms() {
        let p = AccessPolicy::parse("thresh(2, attr0, 1, and(attr2, or(3, attr1)))").unwrap();
        assert_eq!(p.leaves(), vec![0, 1, 2, 3, 1]);
        assert_eq!(
            p.to_string(),
            "thresh(2, attr0, attr1, thresh(2, attr2, thresh(1, attr3, attr1)))"
        );
        assert_eq!(AccessPolicy::parse(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn rejects_bad_threshold() {
        assert_eq!(
            AccessPolicy::parse("thresh(3, attr0, attr1)").unwrap_err(),
            PolicyError::InvalidThreshold {
                threshold: 3,
                children: 2
            }
        );
        assert!(matches!(
            AccessPolicy::parse("thresh(0, attr0)").unwrap_err(),
            PolicyError::InvalidThreshold { .. }
        ));
    }

    #[test]
    fn parse_errors_carry_position() {
        match AccessPolicy::parse("and(attr0, ").unwrap_err() {
            PolicyError::Parse { pos, .. } => assert_eq!(pos, 11),
            e => panic!("{e}"),
        }
        match AccessPolicy::parse("and(attr0 attr1)").unwrap_err() {
            PolicyError::Parse { pos, .. } => assert_eq!(pos, 10),
            e => panic!("{e}"),
        }
        match AccessPolicy::parse("xor(1,2)").unwrap_err() {
            PolicyError::Parse { pos, msg } => {
                assert_eq!(pos, 0);
                assert!(msg.contains("xor"));
            }
            e => panic!("{e}"),
        }
        assert!(AccessPolicy::parse("attr1 )").is_err());
    }

    #[test]
    fn universe_check() {
        let p = AccessPolicy::parse("or(attr1, attr4)").unwrap();
        assert!(p.validate_universe(5).is_ok());
        assert_eq!(
            p.validate_universe(4).unwrap_err(),
            PolicyError::OutsideUniverse {
                attr: 4,
                universe: 4
            }
        );
    }

    #[test]
    fn two_of_three_satisfaction() {
        let p = AccessPolicy::parse("thresh(2, 0, 1, 2)").unwrap();
        assert!(p.is_satisfied_by(&[0, 1].into()));
        assert!(!p.is_satisfied_by(&[0].into()));
        assert!(p.is_satisfied_by(&[0, 1, 2].into()));
    }
}
