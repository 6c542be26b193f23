//! Minimal dense-tensor library with reverse-mode automatic differentiation.
//!
//! Covers exactly the operations the segmentation model and its losses need:
//! conv2d, max-pooling, nearest upsampling, relu/sigmoid, channel concat,
//! BCE-with-logits, MSE, and a handful of arithmetic helpers. Everything is
//! generic over the element precision: training runs in `f32`, gradient
//! checking runs the whole graph in `f64`.

mod adam;
mod element;
mod ops;
mod tape;

pub use adam::Adam;
pub use element::Element;
pub use tape::{Grads, NodeId, Tape};

use std::rc::Rc;

use crate::error::{Error, Result};

/// A dense n-dimensional array, optionally tied to a node on an active tape.
///
/// Data is immutable once created; clones share storage.
#[derive(Debug, Clone)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Rc<Vec<E>>,
    node: Option<NodeId>,
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} implies {} elements but {} were given",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: Rc::new(vec![E::zero(); n]),
            node: None,
        }
    }

    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: vec![],
            data: Rc::new(vec![v]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<E> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "item() requires a scalar tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub(crate) fn with_node(shape: Vec<usize>, data: Vec<E>, node: NodeId) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Rc::new(data),
            node: Some(node),
        }
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<E>> {
        Rc::clone(&self.data)
    }

    /// Cast to another precision (used by the 64-bit gradient-check mode).
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::new(self.data.iter().map(|v| T::from_f64(v.as_f64())).collect()),
            node: None,
        }
    }
}

/// Shape of a 4-D activation tensor in NCHW order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Nchw {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

pub(crate) fn as_nchw(shape: &[usize], what: &str) -> Result<Nchw> {
    if shape.len() != 4 {
        return Err(Error::Dim(format!(
            "{what} must be 4-D (NCHW), got shape {shape:?}"
        )));
    }
    Ok(Nchw {
        n: shape[0],
        c: shape[1],
        h: shape[2],
        w: shape[3],
    })
}

/// Debug-mode check that an op produced only finite values.
#[inline]
pub(crate) fn debug_check_finite<E: Element>(op: &str, data: &[E]) {
    if cfg!(debug_assertions) {
        for (i, v) in data.iter().enumerate() {
            assert!(
                v.is_finite(),
                "non-finite value {v:?} at index {i} in output of {op}"
            );
        }
    }
}
