use ndarray::{ArrayD, IxDyn};

use crate::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Computes gradient contributions for each parent given the gradient of
/// the loss with respect to this node's output.
///
/// Arguments: output gradient, parent values, node value.
pub(crate) type BackwardFn<F> =
    Box<dyn Fn(&ArrayD<F>, &[&ArrayD<F>], &ArrayD<F>) -> Vec<ArrayD<F>>>;

pub(crate) struct Node<F: Scalar> {
    pub(crate) value: ArrayD<F>,
    pub(crate) parents: Vec<Var>,
    pub(crate) backward: Option<BackwardFn<F>>,
}

/// A Wengert list: nodes are appended in execution order, so reverse
/// iteration is a valid topological order for backpropagation.
pub struct Tape<F: Scalar> {
    pub(crate) nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<F>,
        parents: Vec<Var>,
        backward: Option<BackwardFn<F>>,
    ) -> Var {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        // Keep every node in standard layout so flat indexing is valid.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        self.nodes.push(Node {
            value,
            parents,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input node. Leaves participate in gradient computation.
    pub fn leaf(&mut self, value: ArrayD<F>) -> Var {
        self.push(value, Vec::new(), None)
    }

    /// Records a 0-d scalar node.
    pub fn scalar(&mut self, value: F) -> Var {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), value))
    }

    pub fn value(&self, v: Var) -> &ArrayD<F> {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node as a scalar.
    pub fn scalar_value(&self, v: Var) -> F {
        let a = self.value(v);
        assert_eq!(a.len(), 1, "node is not a scalar");
        *a.iter().next().unwrap()
    }

    /// Reverse-mode sweep from a scalar root. Returns the gradient of the
    /// root with respect to every node it reaches.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward requires a scalar root"
        );
        let mut grads: Vec<Option<ArrayD<F>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(self.value(root).raw_dim(), F::one()));
        for id in (0..=root.0).rev() {
            let Some(out_grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if let Some(backward) = &node.backward {
                let parent_values: Vec<&ArrayD<F>> =
                    node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let contributions = backward(&out_grad, &parent_values, &node.value);
                debug_assert_eq!(contributions.len(), node.parents.len());
                for (parent, contribution) in node.parents.iter().zip(contributions) {
                    debug_assert_eq!(
                        contribution.shape(),
                        self.nodes[parent.0].value.shape(),
                        "gradient shape mismatch for parent {}",
                        parent.0
                    );
                    match &mut grads[parent.0] {
                        Some(acc) => *acc += &contribution,
                        slot @ None => *slot = Some(contribution),
                    }
                }
            }
            grads[id] = Some(out_grad);
        }
        Gradients { grads }
    }
}

/// Result of a backward sweep.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<ArrayD<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient with respect to `v`, or `None` if the root does not
    /// depend on `v`.
    pub fn wrt(&self, v: Var) -> Option<&ArrayD<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
