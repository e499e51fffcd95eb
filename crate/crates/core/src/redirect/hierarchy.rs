use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Master, OpenReply, RedirError};
use crate::time::Timestamp;

/// An answered open plus the route it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub reply: OpenReply,
    /// Masters consulted, this one included.
    pub hops: u32,
    /// Names of the masters consulted, outermost first.
    pub route: Vec<String>,
}

pub trait Resolver {
    fn name(&self) -> &str;
    fn resolve(&mut self, path: &str, now: Timestamp) -> Result<Resolution, RedirError>;
}

impl Resolver for Master {
    fn name(&self) -> &str {
        Master::name(self)
    }

    fn resolve(&mut self, path: &str, now: Timestamp) -> Result<Resolution, RedirError> {
        Ok(Resolution {
            reply: self.open(path, now)?,
            hops: 1,
            route: alloc::vec![self.name().into()],
        })
    }
}

/// A master of masters: routes each path to the child owning its longest
/// matching prefix.
pub struct SuperMaster {
    name: String,
    children: Vec<(String, Box<dyn Resolver>)>,
}

impl SuperMaster {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            children: Vec::new(),
        }
    }

    /// `prefix` is a path prefix on segment boundaries, e.g. `/fedA`.
    pub fn add_child(&mut self, prefix: &str, child: Box<dyn Resolver>) {
        self.children.push((prefix.trim_end_matches('/').into(), child));
    }

    fn owner(&self, path: &str) -> Option<usize> {
        self.children
            .iter()
            .enumerate()
            .filter(|(_, (p, _))| {
                p.is_empty()
                    || path == p
                    || path
                        .strip_prefix(p.as_str())
                        .is_some_and(|rest| rest.starts_with('/'))
            })
            .max_by_key(|(_, (p, _))| p.len())
            .map(|(i, _)| i)
    }

    pub fn child_mut(&mut self, prefix: &str) -> Option<&mut (dyn Resolver + 'static)> {
        self.children
            .iter_mut()
            .find(|(p, _)| p == prefix)
            .map(|(_, c)| c.as_mut())
    }
}

impl Resolver for SuperMaster {
    fn name(&self) -> &str {
        &self.name
    }

    fn resolve(&mut self, path: &str, now: Timestamp) -> Result<Resolution, RedirError> {
        let i = self
            .owner(path)
            .ok_or_else(|| RedirError::NotFound(path.into()))?;
        let mut r = self.children[i].1.resolve(path, now)?;
        r.hops += 1;
        r.route.insert(0, self.name.clone());
        Ok(r)
    }
}
