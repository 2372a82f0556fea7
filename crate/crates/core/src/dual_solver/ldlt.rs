//! Sparse symmetric-indefinite LDLT factorization of the saddle-point
//! matrix, stored as its upper triangle.
//!
//! The pattern is analyzed once (AMD ordering plus simplicial symbolic
//! factorization); numeric refactorizations permute the updated values and
//! rerun the numeric LDLT. Near-zero pivots are shifted by sign-aware
//! dynamic regularization (positive for flux rows, negative for constraint
//! rows); the flow engine removes the perturbation through iterative
//! refinement against the unregularized matrix.

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::sparse::linalg::cholesky::simplicial::{
    self, EliminationTreeRef, SymbolicSimplicialCholesky,
};
use faer::reborrow::ReborrowMut;
use faer::sparse::linalg::amd;
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Conj, MatMut, Par};

use crate::error::{Error, Result};

pub(super) struct UpperKkt {
    n: usize,
    perm: Vec<usize>,
    perm_inv: Vec<usize>,
    signs_perm: Vec<i8>,
    symbolic: SymbolicSimplicialCholesky<usize>,
    l_values: Vec<f64>,
    perm_col_ptr: Vec<usize>,
    perm_row_idx: Vec<usize>,
    perm_values: Vec<f64>,
    factored: bool,
}

fn solver_err<E: std::fmt::Debug>(what: &str) -> impl FnOnce(E) -> Error + '_ {
    move |e| Error::Solver(format!("{what}: {e:?}"))
}

impl UpperKkt {
    /// Symbolic setup from the upper-triangle pattern. `nf` flux rows come
    /// first and carry positive expected pivot signs.
    pub(super) fn new(upper: &SparseColMat<usize, f64>, nf: usize) -> Result<Self> {
        let n = upper.nrows();
        let nnz = upper.compute_nnz();

        let mut perm = vec![0usize; n];
        let mut perm_inv = vec![0usize; n];
        let mut mem = MemBuffer::try_new(amd::order_scratch::<usize>(n, nnz))
            .map_err(solver_err("amd buffer"))?;
        amd::order(
            &mut perm,
            &mut perm_inv,
            upper.symbolic(),
            amd::Control::default(),
            MemStack::new(&mut mem),
        )
        .map_err(solver_err("amd ordering"))?;

        let signs_perm: Vec<i8> = perm.iter().map(|&p| if p < nf { 1 } else { -1 }).collect();

        let mut perm_col_ptr = vec![0usize; n + 1];
        let mut perm_row_idx = vec![0usize; nnz];
        let mut perm_values = vec![0.0f64; nnz];
        let perm_ref = unsafe { faer::perm::PermRef::new_unchecked(&perm, &perm_inv, n) };
        let mut mem = MemBuffer::try_new(faer::sparse::utils::permute_self_adjoint_scratch::<
            usize,
        >(n))
        .map_err(solver_err("permute buffer"))?;
        faer::sparse::utils::permute_self_adjoint_to_unsorted(
            &mut perm_values,
            &mut perm_col_ptr,
            &mut perm_row_idx,
            upper.as_ref(),
            perm_ref,
            faer::Side::Upper,
            faer::Side::Upper,
            MemStack::new(&mut mem),
        );
        let perm_symbolic = unsafe {
            SymbolicSparseColMat::new_unchecked(
                n,
                n,
                perm_col_ptr.clone(),
                None,
                perm_row_idx.clone(),
            )
        };

        let mut mem = MemBuffer::try_new(StackReq::any_of(&[
            simplicial::prefactorize_symbolic_cholesky_scratch::<usize>(n, nnz),
            simplicial::factorize_simplicial_symbolic_cholesky_scratch::<usize>(n),
        ]))
        .map_err(solver_err("symbolic buffer"))?;
        let stack = MemStack::new(&mut mem);
        let mut etree = vec![0isize; n];
        let mut col_counts = vec![0usize; n];
        simplicial::prefactorize_symbolic_cholesky(
            &mut etree,
            &mut col_counts,
            perm_symbolic.as_ref(),
            stack,
        );
        let symbolic = simplicial::factorize_simplicial_symbolic_cholesky(
            perm_symbolic.as_ref(),
            unsafe { EliminationTreeRef::from_inner(&etree) },
            &col_counts,
            stack,
        )
        .map_err(solver_err("symbolic cholesky"))?;

        let l_values = vec![0.0f64; symbolic.len_val()];
        Ok(UpperKkt {
            n,
            perm,
            perm_inv,
            signs_perm,
            symbolic,
            l_values,
            perm_col_ptr,
            perm_row_idx,
            perm_values,
            factored: false,
        })
    }

    pub(super) fn is_factored(&self) -> bool {
        self.factored
    }

    /// Numeric refactorization from the current values of `upper`.
    pub(super) fn refactor(&mut self, upper: &SparseColMat<usize, f64>) -> Result<()> {
        let n = self.n;
        let perm_ref = unsafe { faer::perm::PermRef::new_unchecked(&self.perm, &self.perm_inv, n) };
        let mut mem = MemBuffer::try_new(faer::sparse::utils::permute_self_adjoint_scratch::<
            usize,
        >(n))
        .map_err(solver_err("permute buffer"))?;
        faer::sparse::utils::permute_self_adjoint_to_unsorted(
            &mut self.perm_values,
            &mut self.perm_col_ptr,
            &mut self.perm_row_idx,
            upper.as_ref(),
            perm_ref,
            faer::Side::Upper,
            faer::Side::Upper,
            MemStack::new(&mut mem),
        );
        let perm_mat = SparseColMat::new(
            unsafe {
                SymbolicSparseColMat::new_unchecked(
                    n,
                    n,
                    self.perm_col_ptr.clone(),
                    None,
                    self.perm_row_idx.clone(),
                )
            },
            self.perm_values.clone(),
        );

        // Scale-aware regularization thresholds from the diagonal.
        let mut scale = 0.0f64;
        for j in 0..n {
            for k in self.perm_col_ptr[j]..self.perm_col_ptr[j + 1] {
                if self.perm_row_idx[k] == j {
                    scale = scale.max(self.perm_values[k].abs());
                }
            }
        }
        let scale = scale.max(1e-300);
        let reg = LdltRegularization {
            dynamic_regularization_signs: Some(&self.signs_perm),
            dynamic_regularization_delta: 1e-7 * scale,
            dynamic_regularization_epsilon: 1e-12 * scale,
        };

        let mut mem = MemBuffer::try_new(
            simplicial::factorize_simplicial_numeric_ldlt_scratch::<usize, f64>(n),
        )
        .map_err(solver_err("numeric buffer"))?;
        simplicial::factorize_simplicial_numeric_ldlt::<usize, f64>(
            &mut self.l_values,
            perm_mat.as_ref(),
            reg,
            &self.symbolic,
            MemStack::new(&mut mem),
        )
        .map_err(solver_err("numeric ldlt"))?;
        self.factored = true;
        Ok(())
    }

    /// Triangular solves with the last factorization, in place.
    pub(super) fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        if !self.factored {
            return Err(Error::Solver("ldlt solve before factorization".into()));
        }
        let n = self.n;
        let perm_ref = unsafe { faer::perm::PermRef::new_unchecked(&self.perm, &self.perm_inv, n) };
        let ldlt = simplicial::SimplicialLdltRef::<'_, usize, f64>::new(&self.symbolic, &self.l_values);
        let mut mem = MemBuffer::try_new(StackReq::any_of(&[
            faer::perm::permute_rows_in_place_scratch::<usize, f64>(n, 1),
            self.symbolic.solve_in_place_scratch::<f64>(n),
        ]))
        .map_err(solver_err("solve buffer"))?;
        let stack = MemStack::new(&mut mem);
        let mut sol = MatMut::from_column_major_slice_mut(x, n, 1);
        faer::perm::permute_rows_in_place(sol.rb_mut(), perm_ref, stack);
        ldlt.solve_in_place_with_conj(Conj::No, sol.rb_mut(), Par::Seq, stack);
        faer::perm::permute_rows_in_place(sol.rb_mut(), perm_ref.inverse(), stack);
        Ok(())
    }
}
