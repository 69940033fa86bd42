#include "qpg_runtime.h"

#define QPG_ABS(v) ((v) < 0 ? -(v) : (v))
#define QPG_MAX(a, b) ((a) > (b) ? (a) : (b))

static void sym_upper_spmv(int n, const int *cp, const int *ri, const qpg_float *v,
                           const qpg_float *x, qpg_float *y)
{
    int c, k, r;
    for (c = 0; c < n; ++c) {
        y[c] = 0;
    }
    for (c = 0; c < n; ++c) {
        for (k = cp[c]; k < cp[c + 1]; ++k) {
            r = ri[k];
            y[r] += v[k] * x[c];
            if (r != c) {
                y[c] += v[k] * x[r];
            }
        }
    }
}

static qpg_float norm_inf(const qpg_float *v, int len)
{
    qpg_float m = 0;
    int i;
    for (i = 0; i < len; ++i) {
        m = QPG_MAX(m, QPG_ABS(v[i]));
    }
    return m;
}

void qpg_setup_rho(qpg_workspace *w)
{
    int i, cls;
    for (i = 0; i < w->m; ++i) {
        if (w->l[i] <= -QPG_INF && w->u[i] >= QPG_INF) {
            cls = 0;
        } else if (w->u[i] - w->l[i] < w->rho_eq_tol) {
            cls = 1;
        } else {
            cls = 2;
        }
        w->rho[i] = w->rho_class[cls];
        w->rho_inv[i] = w->rho_inv_class[cls];
    }
}

void qpg_kkt_set_p(qpg_workspace *w)
{
    int k;
    for (k = 0; k < w->p_nnz; ++k) {
        w->k_val[w->p_to_kkt[k]] = 0;
    }
    for (k = 0; k < w->n; ++k) {
        w->k_val[w->diag_x[k]] = w->sigma;
    }
    for (k = 0; k < w->p_nnz; ++k) {
        w->k_val[w->p_to_kkt[k]] += w->p_val[k];
    }
}

void qpg_kkt_set_a(qpg_workspace *w)
{
    int k;
    for (k = 0; k < w->a_nnz; ++k) {
        w->k_val[w->a_to_kkt[k]] = w->a_val[k];
    }
}

void qpg_kkt_set_rho(qpg_workspace *w)
{
    int i;
    for (i = 0; i < w->m; ++i) {
        w->k_val[w->rho_to_kkt[i]] = -w->rho_inv[i];
    }
}

int qpg_factor(qpg_workspace *w)
{
    const int dim = w->n + w->m;
    int col, p, i, j, c, end, bidx, next, nnz_y, nnz_e;
    qpg_float yc, dc;

    w->factorizations += 1;
    w->positive = 0;
    for (i = 0; i < dim; ++i) {
        w->y_markers[i] = 0;
        w->y_vals[i] = 0;
        w->d[i] = 0;
        w->next_space[i] = w->lp[i];
    }
    for (col = 0; col < dim; ++col) {
        nnz_y = 0;
        for (p = w->k_colptr[col]; p < w->k_colptr[col + 1]; ++p) {
            bidx = w->k_rowidx[p];
            if (bidx == col) {
                w->d[col] = w->k_val[p];
                continue;
            }
            w->y_vals[bidx] = w->k_val[p];
            if (!w->y_markers[bidx]) {
                w->y_markers[bidx] = 1;
                w->elim[0] = bidx;
                nnz_e = 1;
                next = w->etree[bidx];
                while (next != -1 && next < col) {
                    if (w->y_markers[next]) {
                        break;
                    }
                    w->y_markers[next] = 1;
                    w->elim[nnz_e] = next;
                    nnz_e += 1;
                    next = w->etree[next];
                }
                while (nnz_e > 0) {
                    nnz_e -= 1;
                    w->y_idx[nnz_y] = w->elim[nnz_e];
                    nnz_y += 1;
                }
            }
        }
        for (i = nnz_y - 1; i >= 0; --i) {
            c = w->y_idx[i];
            end = w->next_space[c];
            yc = w->y_vals[c];
            for (j = w->lp[c]; j < end; ++j) {
                w->y_vals[w->li[j]] -= w->lx[j] * yc;
            }
            w->li[end] = col;
            w->lx[end] = yc * w->dinv[c];
            w->d[col] -= yc * w->lx[end];
            w->next_space[c] += 1;
            w->y_vals[c] = 0;
            w->y_markers[c] = 0;
        }
        dc = w->d[col];
        /* dc - dc is nonzero (NaN) exactly when dc is infinite or NaN */
        if (dc == 0 || dc - dc != 0) {
            return -1;
        }
        if (dc > 0) {
            w->positive += 1;
        }
        w->dinv[col] = 1 / dc;
    }
    if (w->positive != w->n) {
        return -2;
    }
    return 0;
}

void qpg_ldl_solve(const qpg_workspace *w, qpg_float *x)
{
    const int dim = w->n + w->m;
    int i, j;
    qpg_float xi;
    for (i = 0; i < dim; ++i) {
        xi = x[i];
        for (j = w->lp[i]; j < w->lp[i + 1]; ++j) {
            x[w->li[j]] -= w->lx[j] * xi;
        }
    }
    for (i = 0; i < dim; ++i) {
        x[i] *= w->dinv[i];
    }
    for (i = dim - 1; i >= 0; --i) {
        xi = x[i];
        for (j = w->lp[i]; j < w->lp[i + 1]; ++j) {
            xi -= w->lx[j] * x[w->li[j]];
        }
        x[i] = xi;
    }
}

static void admm_step(qpg_workspace *w)
{
    const int n = w->n, m = w->m;
    const qpg_float alpha = w->alpha;
    const qpg_float sigma = w->sigma;
    int i, j;
    qpg_float xt, nu, zt, zrel, znew;

    for (j = 0; j < n; ++j) {
        w->x_prev[j] = w->x[j];
    }
    for (i = 0; i < m; ++i) {
        w->z_prev[i] = w->z[i];
    }
    for (j = 0; j < n; ++j) {
        w->work[w->pinv[j]] = sigma * w->x_prev[j] - w->q[j];
    }
    for (i = 0; i < m; ++i) {
        w->work[w->pinv[n + i]] = w->z_prev[i] - w->rho_inv[i] * w->y[i];
    }
    qpg_ldl_solve(w, w->work);
    for (j = 0; j < n; ++j) {
        xt = w->work[w->pinv[j]];
        w->x[j] = alpha * xt + (1 - alpha) * w->x_prev[j];
    }
    for (i = 0; i < m; ++i) {
        nu = w->work[w->pinv[n + i]];
        zt = w->z_prev[i] + w->rho_inv[i] * (nu - w->y[i]);
        zrel = alpha * zt + (1 - alpha) * w->z_prev[i];
        znew = zrel + w->rho_inv[i] * w->y[i];
        if (znew < w->l[i]) {
            znew = w->l[i];
        }
        if (znew > w->u[i]) {
            znew = w->u[i];
        }
        w->dy[i] = w->rho[i] * (zrel - znew);
        w->y[i] += w->dy[i];
        w->z[i] = znew;
    }
}

static void residuals(qpg_workspace *w, qpg_float *eps_prim, qpg_float *eps_dual)
{
    const int n = w->n, m = w->m;
    int i, j, k;
    qpg_float xj, acc, prim = 0, dual = 0, ax_n = 0, z_n = 0, px_n = 0, aty_n = 0, q_n = 0, r;

    for (i = 0; i < m; ++i) {
        w->ax[i] = 0;
    }
    for (j = 0; j < n; ++j) {
        w->aty[j] = 0;
    }
    for (j = 0; j < n; ++j) {
        xj = w->x[j];
        acc = 0;
        for (k = w->a_colptr[j]; k < w->a_colptr[j + 1]; ++k) {
            i = w->a_rowidx[k];
            w->ax[i] += w->a_val[k] * xj;
            acc += w->a_val[k] * w->y[i];
        }
        w->aty[j] = acc;
    }
    sym_upper_spmv(n, w->p_colptr, w->p_rowidx, w->p_val, w->x, w->px);
    for (i = 0; i < m; ++i) {
        r = w->ax[i] - w->z[i];
        prim = QPG_MAX(prim, QPG_ABS(r));
        ax_n = QPG_MAX(ax_n, QPG_ABS(w->ax[i]));
        z_n = QPG_MAX(z_n, QPG_ABS(w->z[i]));
    }
    for (j = 0; j < n; ++j) {
        r = w->px[j] + w->q[j] + w->aty[j];
        dual = QPG_MAX(dual, QPG_ABS(r));
        px_n = QPG_MAX(px_n, QPG_ABS(w->px[j]));
        aty_n = QPG_MAX(aty_n, QPG_ABS(w->aty[j]));
        q_n = QPG_MAX(q_n, QPG_ABS(w->q[j]));
    }
    w->prim_res = prim;
    w->dual_res = dual;
    *eps_prim = w->eps_abs + w->eps_rel * QPG_MAX(ax_n, z_n);
    *eps_dual = w->eps_abs + w->eps_rel * QPG_MAX(QPG_MAX(px_n, aty_n), q_n);
}

static int primal_infeasible(qpg_workspace *w)
{
    const qpg_float eps = w->eps_prim_inf;
    int i, j, k, lo_inf, hi_inf;
    qpg_float norm_dy, lhs = 0, worst = 0, acc, pos, neg;

    for (i = 0; i < w->m; ++i) {
        lo_inf = w->l[i] <= -QPG_INF;
        hi_inf = w->u[i] >= QPG_INF;
        if (hi_inf && lo_inf) {
            w->dy[i] = 0;
        } else if (hi_inf) {
            if (w->dy[i] > 0) {
                w->dy[i] = 0;
            }
        } else if (lo_inf) {
            if (w->dy[i] < 0) {
                w->dy[i] = 0;
            }
        }
    }
    norm_dy = norm_inf(w->dy, w->m);
    if (norm_dy <= 1e-20) {
        return 0;
    }
    for (i = 0; i < w->m; ++i) {
        pos = w->dy[i] > 0 ? w->dy[i] : 0;
        neg = w->dy[i] < 0 ? w->dy[i] : 0;
        lhs += w->u[i] * pos + w->l[i] * neg;
    }
    if (lhs >= -eps * norm_dy) {
        return 0;
    }
    for (j = 0; j < w->n; ++j) {
        acc = 0;
        for (k = w->a_colptr[j]; k < w->a_colptr[j + 1]; ++k) {
            acc += w->a_val[k] * w->dy[w->a_rowidx[k]];
        }
        worst = QPG_MAX(worst, QPG_ABS(acc));
    }
    return worst < eps * norm_dy;
}

static int dual_infeasible(qpg_workspace *w)
{
    const qpg_float eps = w->eps_dual_inf;
    const int n = w->n, m = w->m;
    qpg_float *dx = w->work;
    int i, j, k;
    qpg_float norm_dx, qdx = 0;

    for (j = 0; j < n; ++j) {
        dx[j] = w->x[j] - w->x_prev[j];
    }
    norm_dx = norm_inf(dx, n);
    if (norm_dx <= 1e-20) {
        return 0;
    }
    for (j = 0; j < n; ++j) {
        qdx += w->q[j] * dx[j];
    }
    if (qdx >= -eps * norm_dx) {
        return 0;
    }
    sym_upper_spmv(n, w->p_colptr, w->p_rowidx, w->p_val, dx, w->px);
    if (norm_inf(w->px, n) > eps * norm_dx) {
        return 0;
    }
    for (i = 0; i < m; ++i) {
        w->ax[i] = 0;
    }
    for (j = 0; j < n; ++j) {
        for (k = w->a_colptr[j]; k < w->a_colptr[j + 1]; ++k) {
            w->ax[w->a_rowidx[k]] += w->a_val[k] * dx[j];
        }
    }
    for (i = 0; i < m; ++i) {
        if (w->u[i] < QPG_INF && w->ax[i] > eps * norm_dx) {
            return 0;
        }
        if (w->l[i] > -QPG_INF && w->ax[i] < -eps * norm_dx) {
            return 0;
        }
    }
    return 1;
}

int qpg_solve(qpg_workspace *w)
{
    int iter, i, countdown = w->check_interval;
    qpg_float eps_prim, eps_dual;

    if (!w->warm_start) {
        for (i = 0; i < w->n; ++i) {
            w->x[i] = 0;
        }
        for (i = 0; i < w->m; ++i) {
            w->z[i] = 0;
            w->y[i] = 0;
        }
    }
    w->status = QPG_MAX_ITER_REACHED;
    w->iterations = w->max_iter;
    for (iter = 1; iter <= w->max_iter; ++iter) {
        admm_step(w);
        countdown -= 1;
        if (countdown != 0 && iter != w->max_iter) {
            continue;
        }
        countdown = w->check_interval;
        residuals(w, &eps_prim, &eps_dual);
        if (w->prim_res <= eps_prim && w->dual_res <= eps_dual) {
            w->status = QPG_SOLVED;
            w->iterations = iter;
            break;
        }
        if (primal_infeasible(w)) {
            w->status = QPG_PRIMAL_INFEASIBLE;
            w->iterations = iter;
            break;
        }
        if (dual_infeasible(w)) {
            w->status = QPG_DUAL_INFEASIBLE;
            w->iterations = iter;
            break;
        }
    }
    return w->status;
}
