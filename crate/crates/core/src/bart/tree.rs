/// A node of a regression tree. Rows with `x[var] ≤ cut` go left.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf { value: f64 },
    Split { var: usize, cut: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    node: Node,
    parent: Option<usize>,
    depth: usize,
}

/// Binary tree stored in an arena; slot 0 is the root. Freed slots are
/// reused by later splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    slots: Vec<Option<Slot>>,
    free: Vec<usize>,
}

impl Tree {
    pub const ROOT: usize = 0;

    pub fn stump(value: f64) -> Self {
        Tree {
            slots: vec![Some(Slot {
                node: Node::Leaf { value },
                parent: None,
                depth: 0,
            })],
            free: Vec::new(),
        }
    }

    fn slot(&self, id: usize) -> &Slot {
        self.slots[id].as_ref().expect("live tree node")
    }

    fn slot_mut(&mut self, id: usize) -> &mut Slot {
        self.slots[id].as_mut().expect("live tree node")
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.slot(id).node
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.slot(id).parent
    }

    pub fn depth(&self, id: usize) -> usize {
        self.slot(id).depth
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        matches!(self.node(id), Node::Leaf { .. })
    }

    /// Upper bound on node ids, for sizing lookup tables.
    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    fn live(&self) -> impl Iterator<Item = (usize, &Slot)> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|s| (i, s)))
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.live()
            .filter(|(_, s)| matches!(s.node, Node::Leaf { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.live().filter(|(_, s)| matches!(s.node, Node::Leaf { .. })).count()
    }

    /// Interior nodes whose children are both leaves.
    pub fn nog(&self) -> Vec<usize> {
        self.live()
            .filter(|(_, s)| match s.node {
                Node::Split { left, right, .. } => self.is_leaf(left) && self.is_leaf(right),
                Node::Leaf { .. } => false,
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_nog(&self, id: usize) -> bool {
        match *self.node(id) {
            Node::Split { left, right, .. } => self.is_leaf(left) && self.is_leaf(right),
            Node::Leaf { .. } => false,
        }
    }

    pub fn value(&self, leaf: usize) -> f64 {
        match *self.node(leaf) {
            Node::Leaf { value } => value,
            Node::Split { .. } => panic!("node {leaf} is not a leaf"),
        }
    }

    pub fn set_value(&mut self, leaf: usize, v: f64) {
        match &mut self.slot_mut(leaf).node {
            Node::Leaf { value } => *value = v,
            Node::Split { .. } => panic!("node {leaf} is not a leaf"),
        }
    }

    fn alloc(&mut self, slot: Slot) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.slots[i] = Some(slot);
                i
            }
            None => {
                self.slots.push(Some(slot));
                self.slots.len() - 1
            }
        }
    }

    /// Turns `leaf` into a split with two new leaves; returns their ids.
    pub fn split(&mut self, leaf: usize, var: usize, cut: f64, left_value: f64, right_value: f64) -> (usize, usize) {
        assert!(self.is_leaf(leaf), "can only split a leaf");
        let depth = self.depth(leaf) + 1;
        let mk = |value| Slot {
            node: Node::Leaf { value },
            parent: Some(leaf),
            depth,
        };
        let left = self.alloc(mk(left_value));
        let right = self.alloc(mk(right_value));
        self.slot_mut(leaf).node = Node::Split { var, cut, left, right };
        (left, right)
    }

    /// Collapses a node whose children are both leaves.
    pub fn collapse(&mut self, node: usize, value: f64) {
        let (left, right) = match *self.node(node) {
            Node::Split { left, right, .. } if self.is_leaf(left) && self.is_leaf(right) => (left, right),
            _ => panic!("node {node} does not have two leaf children"),
        };
        self.slots[left] = None;
        self.slots[right] = None;
        self.free.push(right);
        self.free.push(left);
        self.slot_mut(node).node = Node::Leaf { value };
    }

    /// Replaces the rule of an interior node.
    pub fn set_rule(&mut self, node: usize, new_var: usize, new_cut: f64) {
        match &mut self.slot_mut(node).node {
            Node::Split { var, cut, .. } => {
                *var = new_var;
                *cut = new_cut;
            }
            Node::Leaf { .. } => panic!("node {node} is a leaf"),
        }
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        match *self.node(node) {
            Node::Split { left, right, .. } => Some((left, right)),
            Node::Leaf { .. } => None,
        }
    }

    /// Leaf reached by a row whose `j`-th predictor is `x(j)`.
    pub fn leaf_of(&self, x: impl Fn(usize) -> f64) -> usize {
        let mut id = Self::ROOT;
        loop {
            match *self.node(id) {
                Node::Leaf { .. } => return id,
                Node::Split { var, cut, left, right } => id = if x(var) <= cut { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: impl Fn(usize) -> f64) -> f64 {
        self.value(self.leaf_of(x))
    }

    pub fn max_depth(&self) -> usize {
        self.live().map(|(_, s)| s.depth).max().unwrap_or(0)
    }

    pub fn n_nodes(&self) -> usize {
        self.live().count()
    }
}
