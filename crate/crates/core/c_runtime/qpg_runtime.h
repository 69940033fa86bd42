#ifndef QPG_RUNTIME_H
#define QPG_RUNTIME_H

#include "qpg_config.h"

#define QPG_SOLVED 0
#define QPG_MAX_ITER_REACHED 1
#define QPG_PRIMAL_INFEASIBLE 2
#define QPG_DUAL_INFEASIBLE 3
#define QPG_UNSOLVED (-1)

/* All arrays are owned by the generated workspace file. Sizes are fixed at
   generation time; nothing here allocates. */
typedef struct {
    int n;
    int m;

    qpg_float sigma;
    qpg_float alpha;
    qpg_float eps_abs;
    qpg_float eps_rel;
    qpg_float eps_prim_inf;
    qpg_float eps_dual_inf;
    int max_iter;
    int check_interval;
    int warm_start;

    /* step sizes per row class: free, equality, inequality */
    qpg_float rho_eq_tol;
    qpg_float rho_class[3];
    qpg_float rho_inv_class[3];

    /* problem data, values alias the canonical parameter vector */
    int p_nnz;
    const int *p_colptr;
    const int *p_rowidx;
    const qpg_float *p_val;
    int a_nnz;
    const int *a_colptr;
    const int *a_rowidx;
    const qpg_float *a_val;
    const qpg_float *q;
    const qpg_float *l;
    const qpg_float *u;
    qpg_float *rho;
    qpg_float *rho_inv;

    /* permuted upper triangle of the KKT matrix */
    const int *k_colptr;
    const int *k_rowidx;
    qpg_float *k_val;
    const int *pinv;
    const int *p_to_kkt;
    const int *a_to_kkt;
    const int *diag_x;
    const int *rho_to_kkt;

    /* LDL' factors and scratch */
    const int *etree;
    const int *lp;
    int *li;
    qpg_float *lx;
    qpg_float *d;
    qpg_float *dinv;
    unsigned char *y_markers;
    int *y_idx;
    int *elim;
    int *next_space;
    qpg_float *y_vals;

    /* iterates and scratch */
    qpg_float *x;
    qpg_float *z;
    qpg_float *y;
    qpg_float *x_prev;
    qpg_float *z_prev;
    qpg_float *dy;
    qpg_float *work;
    qpg_float *ax;
    qpg_float *px;
    qpg_float *aty;

    int status;
    int iterations;
    int factorizations;
    int positive;
    qpg_float prim_res;
    qpg_float dual_res;
} qpg_workspace;

void qpg_setup_rho(qpg_workspace *w);
void qpg_kkt_set_p(qpg_workspace *w);
void qpg_kkt_set_a(qpg_workspace *w);
void qpg_kkt_set_rho(qpg_workspace *w);
/* Numeric factorization. 0 on success, -1 on a zero pivot, -2 when the
   inertia check fails. */
int qpg_factor(qpg_workspace *w);
void qpg_ldl_solve(const qpg_workspace *w, qpg_float *x);
/* ADMM from the current iterates; returns the status code. */
int qpg_solve(qpg_workspace *w);

#endif
