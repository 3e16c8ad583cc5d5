# cython: language_level=3
"""Compiled RK4 core for the closed-loop master equation.

Semantics mirror the pure numpy path in ``dfscontrol.lindblad._evolve_python``
exactly: per-stage field synthesis, target-basis co-propagation under H0,
per-step re-Hermitization and conditional trace renormalization, per-step
Lyapunov-descent bookkeeping, fixed sampling cadence. The backend-equivalence
tests pin the two implementations against each other.
"""

import numpy as np

from libc.math cimport INFINITY, fabs, isfinite, sqrt

ctypedef double complex dc


cdef inline void _mm(int n, const dc* a, const dc* b, dc* out) noexcept nogil:
    """out = a @ b (row-major n x n)."""
    cdef int i, j, k
    cdef dc aik
    for i in range(n):
        for j in range(n):
            out[i * n + j] = 0
        for k in range(n):
            aik = a[i * n + k]
            for j in range(n):
                out[i * n + j] = out[i * n + j] + aik * b[k * n + j]


cdef inline void _jump_accumulate(int n, double lam, const dc* j_op,
                                  const dc* jr, dc* out) noexcept nogil:
    """out += lam * (jr @ j_op^dagger), with jr = j_op @ rho precomputed."""
    cdef int i, j, k
    cdef dc acc
    for i in range(n):
        for j in range(n):
            acc = 0
            for k in range(n):
                acc = acc + jr[i * n + k] * j_op[j * n + k].conjugate()
            out[i * n + j] = out[i * n + j] + lam * acc


cdef inline void _dissipator(int n, int m_count, const dc* jumps,
                             const double* rates, const dc* gamma_op,
                             const dc* rho, dc* t1, dc* t2, dc* out) noexcept nogil:
    """out = sum_m lam_m J_m rho J_m^dag - 1/2 {Gamma, rho}, Gamma precomputed."""
    cdef int m, i
    for i in range(n * n):
        out[i] = 0
    for m in range(m_count):
        if rates[m] <= 0:
            continue
        _mm(n, jumps + m * n * n, rho, t1)
        _jump_accumulate(n, rates[m], jumps + m * n * n, t1, out)
    _mm(n, gamma_op, rho, t1)
    _mm(n, rho, gamma_op, t2)
    for i in range(n * n):
        out[i] = out[i] - 0.5 * (t1[i] + t2[i])


cdef inline void _build_rho_d(int n, int d, const dc* psi, dc* rho_d) noexcept nogil:
    """rho_d = (1/d) sum_j |psi_j><psi_j| from row-stacked basis vectors."""
    cdef int j, a, b
    cdef double inv = 1.0 / d
    for a in range(n * n):
        rho_d[a] = 0
    for j in range(d):
        for a in range(n):
            for b in range(n):
                rho_d[a * n + b] = rho_d[a * n + b] + psi[j * n + a] * psi[j * n + b].conjugate()
    for a in range(n * n):
        rho_d[a] = rho_d[a] * inv


cdef inline double _trace_prod_real(int n, const dc* a, const dc* b) noexcept nogil:
    """Re Tr(a @ b)."""
    cdef int i, k
    cdef double s = 0
    cdef dc z
    for i in range(n):
        for k in range(n):
            z = a[i * n + k] * b[k * n + i]
            s += z.real
    return s


cdef inline double _trace_prod_imag(int n, const dc* a, const dc* b) noexcept nogil:
    """Im Tr(a @ b)."""
    cdef int i, k
    cdef double s = 0
    cdef dc z
    for i in range(n):
        for k in range(n):
            z = a[i * n + k] * b[k * n + i]
            s += z.imag
    return s


cdef inline double _expect(int n, const dc* rho, const dc* vec) noexcept nogil:
    """Re <vec| rho |vec>."""
    cdef int a, b
    cdef dc w, z
    cdef double s = 0
    for a in range(n):
        w = 0
        for b in range(n):
            w = w + rho[a * n + b] * vec[b]
        z = vec[a].conjugate() * w
        s += z.real
    return s


cdef inline double _lyapunov(int n, int d, const dc* rho, const dc* psi) noexcept nogil:
    """V = Tr(rho_D^2) - Tr(rho rho_D) with rho_D = (1/d) sum_j |psi_j><psi_j|."""
    cdef int i, j, a
    cdef dc g
    cdef double trd2 = 0, trrd = 0
    for i in range(d):
        for j in range(d):
            g = 0
            for a in range(n):
                g = g + psi[i * n + a].conjugate() * psi[j * n + a]
            trd2 += g.real * g.real + g.imag * g.imag
    for j in range(d):
        trrd += _expect(n, rho, psi + j * n)
    return trd2 / (d * d) - trrd / d


cdef inline void _synthesize(int n, int f_count, const dc* ctrls,
                             const dc* rho, const dc* rho_d, const dc* ldiss,
                             bint dissipative, int n0_fixed, double eps_den,
                             double f_max, dc* t1, dc* t2,
                             double* fields, int* n0, bint* floored,
                             bint* capped) noexcept nogil:
    """Feedback law at one stage state; t1/t2 are n*n scratch."""
    cdef int nf, best, i
    cdef double amax, numer, den
    _mm(n, rho, rho_d, t1)
    _mm(n, rho_d, rho, t2)
    for i in range(n * n):
        t1[i] = t1[i] - t2[i]  # K = rho rho_d - rho_d rho
    for nf in range(f_count):
        # f_n = Tr{[-i H_n, rho] rho_D} = Im Tr(H_n K)
        fields[nf] = _trace_prod_imag(n, ctrls + nf * n * n, t1)
    n0[0] = -1
    floored[0] = 0
    capped[0] = 0
    if dissipative:
        numer = _trace_prod_real(n, rho_d, ldiss)
        if n0_fixed >= 0:
            best = n0_fixed
        else:
            best = 0
            amax = fabs(fields[0])
            for nf in range(1, f_count):
                if fabs(fields[nf]) > amax:
                    amax = fabs(fields[nf])
                    best = nf
        n0[0] = best
        den = fields[best]
        if fabs(den) < eps_den:
            fields[best] = 0
            floored[0] = 1
        else:
            fields[best] = -numer / den
    if f_max != INFINITY:
        for nf in range(f_count):
            if fields[nf] > f_max:
                fields[nf] = f_max
                capped[0] = 1
            elif fields[nf] < -f_max:
                fields[nf] = -f_max
                capped[0] = 1


cdef void _deriv(int n, int d, int f_count, int m_count,
                 const dc* h0, const dc* ctrls, const dc* jumps,
                 const double* rates, const dc* gamma_op,
                 bint enabled, bint dissipative, int n0_fixed,
                 double eps_den, double f_max,
                 const dc* rho, const dc* psi,
                 dc* rho_d, dc* ldiss, dc* heff, dc* t1, dc* t2,
                 double* fields, int* n0, bint* floored, bint* capped,
                 dc* drho, dc* dpsi) noexcept nogil:
    """Stage derivative of (rho, psi) plus the synthesized fields."""
    cdef int i, j, a, b, nf
    cdef bint has_fields = enabled and f_count > 0
    cdef const dc* h = h0
    cdef dc acc, w
    if dissipative:
        _dissipator(n, m_count, jumps, rates, gamma_op, rho, t1, t2, ldiss)
    if has_fields:
        _build_rho_d(n, d, psi, rho_d)
        _synthesize(n, f_count, ctrls, rho, rho_d, ldiss, dissipative,
                    n0_fixed, eps_den, f_max, t1, t2, fields, n0, floored, capped)
        for i in range(n * n):
            heff[i] = h0[i]
        for nf in range(f_count):
            if fields[nf] != 0:
                for i in range(n * n):
                    heff[i] = heff[i] + fields[nf] * ctrls[nf * n * n + i]
        h = heff
    else:
        n0[0] = -1
        floored[0] = 0
        capped[0] = 0
        for nf in range(f_count):
            fields[nf] = 0
    # drho = -i (h rho - rho h) [+ L(rho)]
    _mm(n, h, rho, t1)
    _mm(n, rho, h, t2)
    if dissipative:
        for i in range(n * n):
            w = t1[i] - t2[i]
            drho[i] = ldiss[i] - 1j * w
    else:
        for i in range(n * n):
            w = t1[i] - t2[i]
            drho[i] = -1j * w
    # dpsi_j = -i H0 psi_j (target propagates under the free Hamiltonian only)
    for j in range(d):
        for a in range(n):
            acc = 0
            for b in range(n):
                acc = acc + h0[a * n + b] * psi[j * n + b]
            dpsi[j * n + a] = -1j * acc


cdef void _record(int n, int d, int f_count, int m_count,
                  const dc* h0, const dc* ctrls, const dc* jumps,
                  const double* rates, const dc* gamma_op,
                  bint enabled, bint dissipative, int n0_fixed,
                  double eps_den, double f_max,
                  const dc* rho, const dc* psi, double v_now,
                  dc* rho_d, dc* ldiss, dc* heff, dc* t1, dc* t2, double* fbuf,
                  dc* junk_drho, dc* junk_dpsi,
                  dc[:, :, ::1] rho_out, double[::1] v_out,
                  double[:, ::1] probs_out, double[:, ::1] fields_out,
                  int[::1] n0_out, unsigned char[::1] floored_out,
                  unsigned char[::1] capped_out, double[::1] purity_out,
                  double[::1] trace_dev_out, double[::1] herm_dev_out,
                  long si) noexcept nogil:
    """Write one sample row from the current state."""
    cdef int a, b, j, nf
    cdef dc z, zm, tr
    cdef double pur = 0, hd = 0, mag
    cdef int n0_s
    cdef bint fl_s, cap_s
    for a in range(n):
        for b in range(n):
            z = rho[a * n + b]
            rho_out[si, a, b] = z
            pur += z.real * z.real + z.imag * z.imag
            zm = z - rho[b * n + a].conjugate()
            mag = sqrt(zm.real * zm.real + zm.imag * zm.imag)
            if mag > hd:
                hd = mag
    v_out[si] = v_now
    purity_out[si] = pur
    herm_dev_out[si] = hd
    tr = 0
    for a in range(n):
        tr = tr + rho[a * n + a]
    zm = tr - 1.0
    trace_dev_out[si] = sqrt(zm.real * zm.real + zm.imag * zm.imag)
    for j in range(d):
        probs_out[si, j] = _expect(n, rho, psi + j * n)
    if enabled and f_count > 0:
        _deriv(n, d, f_count, m_count, h0, ctrls, jumps, rates, gamma_op,
               enabled, dissipative, n0_fixed, eps_den, f_max,
               rho, psi, rho_d, ldiss, heff, t1, t2,
               fbuf, &n0_s, &fl_s, &cap_s, junk_drho, junk_dpsi)
        for nf in range(f_count):
            fields_out[si, nf] = fbuf[nf]
        n0_out[si] = n0_s
        floored_out[si] = 1 if fl_s else 0
        capped_out[si] = 1 if cap_s else 0


def evolve_loop(h0_in, ctrls_in, jumps_in, rates_in, gamma_in, rho0_in, psi0_in,
                double dt, long n_steps, long sample_every,
                bint enabled, int n0_fixed, double eps_den, double f_max,
                double dv_tol, double renorm_tol):
    """Run the full closed-loop integration; see ``lindblad.evolve``.

    Returns the same dict of sample arrays and counters as the pure-Python
    twin. ``n0_fixed`` is the 0-based correction index, -1 for the
    max-denominator strategy.
    """
    cdef int n = h0_in.shape[0]
    cdef int f_count = ctrls_in.shape[0]
    cdef int m_count = jumps_in.shape[0]
    cdef int d = psi0_in.shape[0]

    h0_a = np.ascontiguousarray(h0_in, dtype=np.complex128)
    if f_count:
        ctrls_a = np.ascontiguousarray(ctrls_in, dtype=np.complex128)
    else:
        ctrls_a = np.zeros((1, n, n), dtype=np.complex128)
    if m_count:
        jumps_a = np.ascontiguousarray(jumps_in, dtype=np.complex128)
        rates_a = np.ascontiguousarray(rates_in, dtype=np.float64)
    else:
        jumps_a = np.zeros((1, n, n), dtype=np.complex128)
        rates_a = np.zeros(1, dtype=np.float64)
    gamma_a = np.ascontiguousarray(gamma_in, dtype=np.complex128)

    cdef const dc[:, ::1] h0 = h0_a
    cdef const dc[:, :, ::1] ctrls = ctrls_a
    cdef const dc[:, :, ::1] jumps = jumps_a
    cdef const double[::1] rates = rates_a
    cdef const dc[:, ::1] gamma_op = gamma_a

    cdef long n_samples = n_steps // sample_every + 1

    rho_a = np.array(rho0_in, dtype=np.complex128, order="C", copy=True)
    psi_a = np.array(psi0_in, dtype=np.complex128, order="C", copy=True)
    cdef dc[:, ::1] rho = rho_a
    cdef dc[:, ::1] psi = psi_a

    rho_out_a = np.empty((n_samples, n, n), dtype=np.complex128)
    v_out_a = np.empty(n_samples, dtype=np.float64)
    probs_out_a = np.empty((n_samples, d), dtype=np.float64)
    fields_out_a = np.zeros((n_samples, max(f_count, 1)), dtype=np.float64)
    n0_out_a = np.full(n_samples, -1, dtype=np.int32)
    floored_out_a = np.zeros(n_samples, dtype=np.uint8)
    capped_out_a = np.zeros(n_samples, dtype=np.uint8)
    purity_out_a = np.empty(n_samples, dtype=np.float64)
    trace_dev_out_a = np.empty(n_samples, dtype=np.float64)
    herm_dev_out_a = np.empty(n_samples, dtype=np.float64)

    cdef dc[:, :, ::1] rho_out = rho_out_a
    cdef double[::1] v_out = v_out_a
    cdef double[:, ::1] probs_out = probs_out_a
    cdef double[:, ::1] fields_out = fields_out_a
    cdef int[::1] n0_out = n0_out_a
    cdef unsigned char[::1] floored_out = floored_out_a
    cdef unsigned char[::1] capped_out = capped_out_a
    cdef double[::1] purity_out = purity_out_a
    cdef double[::1] trace_dev_out = trace_dev_out_a
    cdef double[::1] herm_dev_out = herm_dev_out_a

    # scratch buffers
    k_rho_a = np.empty((4, n, n), dtype=np.complex128)
    k_psi_a = np.empty((4, d, n), dtype=np.complex128)
    s_rho_a = np.empty((n, n), dtype=np.complex128)
    s_psi_a = np.empty((d, n), dtype=np.complex128)
    rho_d_a = np.empty((n, n), dtype=np.complex128)
    ldiss_a = np.zeros((n, n), dtype=np.complex128)
    heff_a = np.empty((n, n), dtype=np.complex128)
    t1_a = np.empty((n, n), dtype=np.complex128)
    t2_a = np.empty((n, n), dtype=np.complex128)
    fbuf_a = np.zeros(max(f_count, 1), dtype=np.float64)

    cdef dc[:, :, ::1] k_rho = k_rho_a
    cdef dc[:, :, ::1] k_psi = k_psi_a
    cdef dc[:, ::1] s_rho = s_rho_a
    cdef dc[:, ::1] s_psi = s_psi_a
    cdef dc[:, ::1] rho_d = rho_d_a
    cdef dc[:, ::1] ldiss = ldiss_a
    cdef dc[:, ::1] heff = heff_a
    cdef dc[:, ::1] t1 = t1_a
    cdef dc[:, ::1] t2 = t2_a
    cdef double[::1] fbuf = fbuf_a

    cdef dc* rho_p = &rho[0, 0]
    cdef dc* psi_p = &psi[0, 0]
    cdef const dc* h0_p = &h0[0, 0]
    cdef const dc* ctrls_p = &ctrls[0, 0, 0]
    cdef const dc* jumps_p = &jumps[0, 0, 0]
    cdef const double* rates_p = &rates[0]
    cdef const dc* gamma_p = &gamma_op[0, 0]
    cdef dc* rho_d_p = &rho_d[0, 0]
    cdef dc* ldiss_p = &ldiss[0, 0]
    cdef dc* heff_p = &heff[0, 0]
    cdef dc* t1_p = &t1[0, 0]
    cdef dc* t2_p = &t2[0, 0]
    cdef dc* s_rho_p = &s_rho[0, 0]
    cdef dc* s_psi_p = &s_psi[0, 0]
    cdef double* fbuf_p = &fbuf[0]
    cdef dc* k0r = &k_rho[0, 0, 0]
    cdef dc* k1r = &k_rho[1, 0, 0]
    cdef dc* k2r = &k_rho[2, 0, 0]
    cdef dc* k3r = &k_rho[3, 0, 0]
    cdef dc* k0p = &k_psi[0, 0, 0]
    cdef dc* k1p = &k_psi[1, 0, 0]
    cdef dc* k2p = &k_psi[2, 0, 0]
    cdef dc* k3p = &k_psi[3, 0, 0]

    cdef bint dissipative = False
    cdef int m
    for m in range(m_count):
        if rates[m] > 0:
            dissipative = True
            break

    cdef long renorms = 0, floored_steps = 0, capped_steps = 0, dv_violations = 0
    cdef double max_dv = -INFINITY
    cdef double max_raw_trace_dev = 0.0
    cdef bint aborted = False
    cdef long aborted_step = -1

    cdef long k, si = 0
    cdef int i, a, b
    cdef int n0_s
    cdef bint fl_s, cap_s
    cdef double v_prev, v_now, dv, trr, raw_dev, scale
    cdef dc za, zm
    cdef int nn = n * n
    cdef int dn = d * n
    cdef double half = 0.5 * dt
    cdef double sixth = dt / 6.0

    with nogil:
        v_prev = _lyapunov(n, d, rho_p, psi_p)
        _record(n, d, f_count, m_count, h0_p, ctrls_p, jumps_p, rates_p, gamma_p,
                enabled, dissipative, n0_fixed, eps_den, f_max,
                rho_p, psi_p, v_prev,
                rho_d_p, ldiss_p, heff_p, t1_p, t2_p, fbuf_p, k0r, k0p,
                rho_out, v_out, probs_out, fields_out, n0_out, floored_out,
                capped_out, purity_out, trace_dev_out, herm_dev_out, 0)

        for k in range(1, n_steps + 1):
            # stage 1 at (rho, psi); stage-1 flags feed the per-step counters
            _deriv(n, d, f_count, m_count, h0_p, ctrls_p, jumps_p, rates_p,
                   gamma_p, enabled, dissipative, n0_fixed, eps_den, f_max,
                   rho_p, psi_p, rho_d_p, ldiss_p, heff_p, t1_p, t2_p,
                   fbuf_p, &n0_s, &fl_s, &cap_s, k0r, k0p)
            if fl_s:
                floored_steps += 1
            if cap_s:
                capped_steps += 1
            # stage 2 at (rho + dt/2 k1)
            for i in range(nn):
                s_rho_p[i] = rho_p[i] + half * k0r[i]
            for i in range(dn):
                s_psi_p[i] = psi_p[i] + half * k0p[i]
            _deriv(n, d, f_count, m_count, h0_p, ctrls_p, jumps_p, rates_p,
                   gamma_p, enabled, dissipative, n0_fixed, eps_den, f_max,
                   s_rho_p, s_psi_p, rho_d_p, ldiss_p, heff_p, t1_p, t2_p,
                   fbuf_p, &n0_s, &fl_s, &cap_s, k1r, k1p)
            # stage 3 at (rho + dt/2 k2)
            for i in range(nn):
                s_rho_p[i] = rho_p[i] + half * k1r[i]
            for i in range(dn):
                s_psi_p[i] = psi_p[i] + half * k1p[i]
            _deriv(n, d, f_count, m_count, h0_p, ctrls_p, jumps_p, rates_p,
                   gamma_p, enabled, dissipative, n0_fixed, eps_den, f_max,
                   s_rho_p, s_psi_p, rho_d_p, ldiss_p, heff_p, t1_p, t2_p,
                   fbuf_p, &n0_s, &fl_s, &cap_s, k2r, k2p)
            # stage 4 at (rho + dt k3)
            for i in range(nn):
                s_rho_p[i] = rho_p[i] + dt * k2r[i]
            for i in range(dn):
                s_psi_p[i] = psi_p[i] + dt * k2p[i]
            _deriv(n, d, f_count, m_count, h0_p, ctrls_p, jumps_p, rates_p,
                   gamma_p, enabled, dissipative, n0_fixed, eps_den, f_max,
                   s_rho_p, s_psi_p, rho_d_p, ldiss_p, heff_p, t1_p, t2_p,
                   fbuf_p, &n0_s, &fl_s, &cap_s, k3r, k3p)
            # combine
            for i in range(nn):
                rho_p[i] = rho_p[i] + sixth * (k0r[i] + 2.0 * k1r[i] + 2.0 * k2r[i] + k3r[i])
            for i in range(dn):
                psi_p[i] = psi_p[i] + sixth * (k0p[i] + 2.0 * k1p[i] + 2.0 * k2p[i] + k3p[i])
            # re-Hermitize
            for a in range(n):
                for b in range(a, n):
                    zm = 0.5 * (rho_p[a * n + b] + rho_p[b * n + a].conjugate())
                    rho_p[a * n + b] = zm
                    rho_p[b * n + a] = zm.conjugate()
            # conditional trace renormalization
            trr = 0
            for a in range(n):
                za = rho_p[a * n + a]
                trr += za.real
            raw_dev = fabs(trr - 1.0)
            if raw_dev > max_raw_trace_dev:
                max_raw_trace_dev = raw_dev
            if raw_dev > renorm_tol and isfinite(trr) and fabs(trr) > 0.5:
                scale = 1.0 / trr
                for i in range(nn):
                    rho_p[i] = rho_p[i] * scale
                renorms += 1
            # Lyapunov-descent bookkeeping
            v_now = _lyapunov(n, d, rho_p, psi_p)
            dv = v_now - v_prev
            if dv > dv_tol:
                dv_violations += 1
            if dv > max_dv:
                max_dv = dv
            v_prev = v_now
            if not isfinite(v_now):
                aborted = True
                aborted_step = k
                break
            if k % sample_every == 0:
                si += 1
                _record(n, d, f_count, m_count, h0_p, ctrls_p, jumps_p, rates_p,
                        gamma_p, enabled, dissipative, n0_fixed, eps_den, f_max,
                        rho_p, psi_p, v_now,
                        rho_d_p, ldiss_p, heff_p, t1_p, t2_p, fbuf_p, k0r, k0p,
                        rho_out, v_out, probs_out, fields_out, n0_out,
                        floored_out, capped_out, purity_out, trace_dev_out,
                        herm_dev_out, si)

    valid = si + 1
    return {
        "rho": rho_out_a[:valid],
        "v": v_out_a[:valid],
        "probs": probs_out_a[:valid],
        "fields": fields_out_a[:valid, :f_count],
        "n0": n0_out_a[:valid],
        "floored": floored_out_a[:valid],
        "capped": capped_out_a[:valid],
        "purity": purity_out_a[:valid],
        "trace_dev": trace_dev_out_a[:valid],
        "herm_dev": herm_dev_out_a[:valid],
        "psi_final": psi_a,
        "counters": {
            "renormalizations": int(renorms),
            "floored_steps": int(floored_steps),
            "capped_steps": int(capped_steps),
            "dv_violations": int(dv_violations),
            "max_dv": float(max_dv),
            "max_raw_trace_dev": float(max_raw_trace_dev),
        },
        "aborted": bool(aborted),
        "aborted_step": int(aborted_step),
    }
