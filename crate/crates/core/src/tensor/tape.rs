use std::collections::HashSet;

use super::Tensor;

/// Operations reachable from a root, in creation order.
///
/// Tensor ids are handed out monotonically, and an op's output is always
/// created after its inputs, so sorting by id yields a topological order.
pub struct Tape {
    entries: Vec<Tensor>,
}

impl Tape {
    pub fn record(root: &Tensor) -> Self {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(op) = &t.0.op {
                stack.extend(op.inputs.iter().cloned());
            }
            entries.push(t);
        }
        entries.sort_by_key(Tensor::id);
        Tape { entries }
    }

    pub fn entries(&self) -> &[Tensor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Names of recorded ops, leaves omitted.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.entries.iter().filter_map(|t| t.0.op.as_ref().map(|o| o.name)).collect()
    }

    /// Every op appears after the producers of all its inputs.
    pub fn is_topological(&self) -> bool {
        let pos: std::collections::HashMap<u64, usize> = self.entries.iter().enumerate().map(|(i, t)| (t.id(), i)).collect();
        self.entries.iter().enumerate().all(|(i, t)| {
            t.0.op
                .as_ref()
                .map_or(true, |op| op.inputs.iter().filter_map(|inp| pos.get(&inp.id())).all(|&p| p < i))
        })
    }
}
