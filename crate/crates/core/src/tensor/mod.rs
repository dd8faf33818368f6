//! Third-order tensor algebra: dense and slice-sparse storage, mode-3
//! products, face-wise products and the transform-domain product built on
//! them.

mod dense;
mod sparse;
mod transform;

pub use dense::Tensor3;
pub(crate) use dense::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc};
pub use sparse::{Csr, SliceSparse3};
pub use transform::{
    facewise_product, m_product, make_transform, mode3_product, sparse_mode3, union_support,
    FacewiseLhs, Transform, TransformKind,
};
pub(crate) use transform::{mode3_into, transpose};
