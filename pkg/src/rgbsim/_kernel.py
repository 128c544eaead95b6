"""Compiled inner loop of the event engine.

The whole event loop runs inside one self-contained compiled function,
``_burst``: per-event work crosses no function boundary that carries array
arguments (numba inserts reference-count traffic at such boundaries, and
its elimination pass gives up on large functions, which costs hundreds of
nanoseconds per event). The random stream is an explicit splitmix64 state
threaded through as a plain integer, so runs are reproducible across
processes and machines and the Python-level operations can share the exact
stream with the batch loop.

Storage layout, per compartment s in (W=0, T=1, S=2, L=3):
  col[s, i]   -2 blended color (weights in mixw), -1 black, >= 0 pure index
  mixw[s, i]  weight vector, valid only when col[s, i] == -2
  org/lin/birth/cid[s, i]   origin code, lineage flag, birth time, coupon id

Snapshot aggregates (counts by dominant color, lineage counts, good-color
masses, used-answer classifications) are computed by scanning the
compartments at sample times; nothing is maintained per event beyond the
compartment sizes, the query counters and the black-coupon count.

Capacity never grows inside a kernel: when an event could overflow the
storage, ``_burst`` returns OVERFLOW before consuming any randomness and
the caller re-enters after reallocating. A grid crossing is handled the
same way: the waiting-time draw that overshoots the stop time is stashed
(PENDING) and consumed on re-entry, so the stream is identical to an
uninterrupted run.
"""

import numpy as np
from numba import njit

# compartments
W, T, S, L = 0, 1, 2, 3

# event channels, in rate order
(CH_POST_P, CH_CURATE_H, CH_INDEX_I, CH_TRAIN_T, CH_QUERY_S, CH_QUERY_A,
 CH_DEATH_W, CH_DEATH_T, CH_DEATH_S, CH_DEATH_L) = range(10)

# coupon origins
(ORG_P, ORG_H_FRESH, ORG_H_FROM_SE, ORG_I, ORG_T_TRAIN, ORG_S_USED,
 ORG_A_USED, ORG_F_FEEDBACK, ORG_BLACK) = range(9)

# rows of the per-flow acceptance tables
FL_P, FL_H, FL_I, FL_T, FL_S, FL_A, FL_F = range(7)

# float parameter vector layout
(PF_LAM_P, PF_LAM_H, PF_LAM_I, PF_LAM_T, PF_LAM_S, PF_LAM_A, PF_ALPHA,
 PF_BETA, PF_XI, PF_MU_W, PF_MU_T, PF_MU_S, PF_MU_L, PF_GAMMA) = range(14)

# int parameter vector layout
PI_K, PI_W_COPIES, PI_GATE, PI_MIXMODE = range(4)

# status codes
OK, HALTED, OVERFLOW, PENDING = 0, 1, 2, 3

_INV53 = 1.0 / 9007199254740992.0  # 2^-53
_M64 = 0xFFFFFFFFFFFFFFFF


@njit(cache=True, inline="always")
def _rand(s):
    """One splitmix64 step on a scalar state; returns (state', u01)."""
    s = (s + 0x9E3779B97F4A7C15) & _M64
    z = s
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    z = z ^ (z >> 31)
    return s, (z >> 11) * _INV53


@njit(cache=True)
def _rates_probe(pf, nn, rates):
    """Channel rates for the current compartment sizes (inspection path;
    the burst loop computes the same quantities inline)."""
    rates[CH_POST_P] = pf[PF_LAM_P]
    rates[CH_CURATE_H] = pf[PF_LAM_H]
    rates[CH_INDEX_I] = pf[PF_LAM_I] * nn[W]
    rates[CH_TRAIN_T] = pf[PF_LAM_T] * nn[T]
    rates[CH_QUERY_S] = pf[PF_LAM_S] if nn[S] > 0 else 0.0
    rates[CH_QUERY_A] = pf[PF_LAM_A] if nn[S] + nn[L] > 0 else 0.0
    rates[CH_DEATH_W] = pf[PF_MU_W] * nn[W]
    rates[CH_DEATH_T] = pf[PF_MU_T] * nn[T]
    rates[CH_DEATH_S] = pf[PF_MU_S] * nn[S]
    rates[CH_DEATH_L] = pf[PF_MU_L] * nn[L]
    total = 0.0
    for i in range(10):
        total += rates[i]
    return total


@njit(cache=True)
def _burst(col, org, lin, birth, cid, mixw, nn, qcnt, nblack, misc, pf, pi,
           acc, bias, denom, q, good, gcum, rs, tarr, rates, xb, pend,
           resume, lastkind, t_stop, max_events):
    """Run events until the stop time, an absorbing state, a storage limit,
    or an event budget is hit.

    Returns (status, events_applied). The waiting-time draw, the channel
    pick and the per-channel draws below consume the stream in a fixed,
    documented order; the readable Python reference of the same semantics
    lives in ``engine.apply_event``.
    """
    K = q.shape[0]
    head = pi[PI_W_COPIES] + 2
    cap = col.shape[1]
    gate = pi[PI_GATE] != 0
    mixmode = pi[PI_MIXMODE]
    s = rs[0]
    done = 0

    # a stashed grid-crossing event must be consumed before sampling new ones
    if resume[0] != 0:
        if (nn[0] + head > cap or nn[1] + head > cap or nn[2] + head > cap
                or nn[3] + head > cap):
            return OVERFLOW, 0
        if pend[0] > t_stop:
            return PENDING, 0

    while True:
        if resume[0] != 0:
            tnew = pend[0]
            total = pend[1]
            resume[0] = 0
        else:
            if done >= max_events:
                rs[0] = s
                return OK, done
            if (nn[0] + head > cap or nn[1] + head > cap
                    or nn[2] + head > cap or nn[3] + head > cap):
                rs[0] = s
                return OVERFLOW, done
            rates[0] = pf[PF_LAM_P]
            rates[1] = pf[PF_LAM_H]
            rates[2] = pf[PF_LAM_I] * nn[W]
            rates[3] = pf[PF_LAM_T] * nn[T]
            rates[4] = pf[PF_LAM_S] if nn[S] > 0 else 0.0
            rates[5] = pf[PF_LAM_A] if nn[S] + nn[L] > 0 else 0.0
            rates[6] = pf[PF_MU_W] * nn[W]
            rates[7] = pf[PF_MU_T] * nn[T]
            rates[8] = pf[PF_MU_S] * nn[S]
            rates[9] = pf[PF_MU_L] * nn[L]
            total = 0.0
            for i in range(10):
                total += rates[i]
            if total <= 0.0:
                rs[0] = s
                return HALTED, done
            s, u = _rand(s)
            tnew = tarr[0] - np.log(1.0 - u) / total
            if tnew > t_stop:
                pend[0] = tnew
                pend[1] = total
                rs[0] = s
                return PENDING, done

        tarr[0] = tnew
        t = tnew
        s, u = _rand(s)
        r = u * total
        kind = -1
        csum = 0.0
        for k in range(10):
            csum += rates[k]
            if r < csum:
                kind = k
                break
        if kind == -1:
            # rounding sliver past the cumulative sum
            for k in range(9, -1, -1):
                if rates[k] > 0.0:
                    kind = k
                    break
        lastkind[0] = kind
        done += 1

        if kind == CH_POST_P:
            # fresh post: color from the generator, accepted by flow-P bias
            s, u = _rand(s)
            c = K - 1
            for k in range(K - 1):
                if u < gcum[k]:
                    c = k
                    break
            s, u = _rand(s)
            if u < acc[FL_P, c]:
                n = nn[W]
                col[W, n] = c
                org[W, n] = ORG_P
                lin[W, n] = 0
                birth[W, n] = t
                cid[W, n] = misc[0]
                misc[0] += 1
                nn[W] = n + 1

        elif kind == CH_CURATE_H:
            s, u = _rand(s)
            if u < pf[PF_GAMMA]:
                # fresh branch: straight from the generator
                s, u = _rand(s)
                c = K - 1
                for k in range(K - 1):
                    if u < gcum[k]:
                        c = k
                        break
                s, u = _rand(s)
                if u < acc[FL_H, c]:
                    n = nn[T]
                    col[T, n] = c
                    org[T, n] = ORG_H_FRESH
                    lin[T, n] = 0
                    birth[T, n] = t
                    cid[T, n] = misc[0]
                    misc[0] += 1
                    nn[T] = n + 1
            else:
                # curated from the search engine; a black draw has no effect
                nS = nn[S]
                if nS > 0:
                    s, u = _rand(s)
                    i = int(u * nS)
                    ci = col[S, i]
                    if ci != -1:
                        if ci >= 0:
                            p = acc[FL_H, ci]
                        else:
                            qual = 0.0
                            for k in range(K):
                                qual += mixw[S, i, k] * q[k]
                            p = (qual + bias[FL_H]) / denom[FL_H]
                        s, u = _rand(s)
                        if u < p:
                            n = nn[T]
                            col[T, n] = ci
                            org[T, n] = ORG_H_FROM_SE
                            lin[T, n] = lin[S, i]
                            birth[T, n] = t
                            cid[T, n] = misc[0]
                            misc[0] += 1
                            if ci == -2:
                                for k in range(K):
                                    mixw[T, n, k] = mixw[S, i, k]
                            nn[T] = n + 1

        elif kind == CH_INDEX_I:
            s, u = _rand(s)
            i = int(u * nn[W])
            ci = col[W, i]
            if ci >= 0:
                p = acc[FL_I, ci]
            else:
                qual = 0.0
                for k in range(K):
                    qual += mixw[W, i, k] * q[k]
                p = (qual + bias[FL_I]) / denom[FL_I]
            s, u = _rand(s)
            if u < p:
                n = nn[S]
                col[S, n] = ci
                org[S, n] = ORG_I
                lin[S, n] = lin[W, i]
                birth[S, n] = t
                cid[S, n] = misc[0]
                misc[0] += 1
                if ci == -2:
                    for k in range(K):
                        mixw[S, n, k] = mixw[W, i, k]
                nn[S] = n + 1

        elif kind == CH_TRAIN_T:
            # no quality bias; each copy gets its own expiry clock
            s, u = _rand(s)
            i = int(u * nn[T])
            ci = col[T, i]
            li = lin[T, i]
            for _ in range(pi[PI_W_COPIES]):
                n = nn[L]
                col[L, n] = ci
                org[L, n] = ORG_T_TRAIN
                lin[L, n] = li
                birth[L, n] = t
                cid[L, n] = misc[0]
                misc[0] += 1
                if ci == -2:
                    for k in range(K):
                        mixw[L, n, k] = mixw[T, i, k]
                nn[L] = n + 1

        elif kind == CH_QUERY_S:
            qcnt[0] += 1
            nS = nn[S]
            s, u = _rand(s)
            i = int(u * nS)
            ci = col[S, i]
            if ci == -1:
                continue  # black: the query goes unanswered
            qcnt[1] += 1
            li = lin[S, i]
            blended = False
            if mixmode == 2:
                s, u = _rand(s)
                j = int(u * nS)
                cj = col[S, j]
                if cj != -1:  # black second source: single-source fallback
                    q1 = q[ci] if ci >= 0 else 0.0
                    if ci == -2:
                        for k in range(K):
                            q1 += mixw[S, i, k] * q[k]
                    q2 = q[cj] if cj >= 0 else 0.0
                    if cj == -2:
                        for k in range(K):
                            q2 += mixw[S, j, k] * q[k]
                    if q2 > q1:  # ties keep the first draw
                        bi, oi, cb, co = j, i, cj, ci
                    else:
                        bi, oi, cb, co = i, j, ci, cj
                    xi = pf[PF_XI]
                    for k in range(K):
                        wb = mixw[S, bi, k] if cb == -2 else (1.0 if k == cb else 0.0)
                        wo = mixw[S, oi, k] if co == -2 else (1.0 if k == co else 0.0)
                        xb[k] = xi * wb + (1.0 - xi) * wo
                    if lin[S, j] != 0:
                        li = 1
                    blended = True
            if blended:
                aci = -2
                for k in range(K):
                    if xb[k] == 1.0:
                        aci = k  # blend collapsed to a pure color
                        break
                qual = 0.0
                for k in range(K):
                    qual += xb[k] * q[k]
                p = (qual + bias[FL_S]) / denom[FL_S]
                s, u = _rand(s)
                if u < p:
                    n = nn[W]
                    col[W, n] = aci
                    org[W, n] = ORG_S_USED
                    lin[W, n] = li
                    birth[W, n] = t
                    cid[W, n] = misc[0]
                    misc[0] += 1
                    if aci == -2:
                        for k in range(K):
                            mixw[W, n, k] = xb[k]
                    nn[W] = n + 1
            else:
                if ci >= 0:
                    p = acc[FL_S, ci]
                else:
                    qual = 0.0
                    for k in range(K):
                        qual += mixw[S, i, k] * q[k]
                    p = (qual + bias[FL_S]) / denom[FL_S]
                s, u = _rand(s)
                if u < p:
                    n = nn[W]
                    col[W, n] = ci
                    org[W, n] = ORG_S_USED
                    lin[W, n] = li
                    birth[W, n] = t
                    cid[W, n] = misc[0]
                    misc[0] += 1
                    if ci == -2:
                        for k in range(K):
                            mixw[W, n, k] = mixw[S, i, k]
                    nn[W] = n + 1

        elif kind == CH_QUERY_A:
            qcnt[2] += 1
            nL = nn[L]
            pool = nL + nn[S]
            if gate:
                s, u = _rand(s)
                i = int(u * pool)
                if i < nL:
                    s1, i1 = L, i
                else:
                    s1, i1 = S, i - nL
                ci = col[s1, i1]
                if ci == -1:
                    continue  # gated black: no answer
            else:
                # ungated: answer from the colored sub-pool, if any
                if pool - nblack[0] <= 0:
                    continue
                while True:
                    s, u = _rand(s)
                    i = int(u * pool)
                    if i < nL:
                        s1, i1 = L, i
                    else:
                        s1, i1 = S, i - nL
                    ci = col[s1, i1]
                    if ci != -1:
                        break
            qcnt[3] += 1
            li = lin[s1, i1]
            blended = False
            if mixmode >= 1:
                if gate:
                    s, u = _rand(s)
                    j = int(u * pool)
                    if j < nL:
                        s2, i2 = L, j
                    else:
                        s2, i2 = S, j - nL
                    cj = col[s2, i2]
                else:
                    while True:
                        s, u = _rand(s)
                        j = int(u * pool)
                        if j < nL:
                            s2, i2 = L, j
                        else:
                            s2, i2 = S, j - nL
                        cj = col[s2, i2]
                        if cj != -1:
                            break
                if cj != -1:  # black second source: single-source fallback
                    s, u = _rand(s)
                    for k in range(K):
                        w1 = mixw[s1, i1, k] if ci == -2 else (1.0 if k == ci else 0.0)
                        w2 = mixw[s2, i2, k] if cj == -2 else (1.0 if k == cj else 0.0)
                        xb[k] = u * w1 + (1.0 - u) * w2
                    if lin[s2, i2] != 0:
                        li = 1
                    blended = True
            # answer representation and quality, shared by both feedback branches
            if blended:
                aci = -2
                for k in range(K):
                    if xb[k] == 1.0:
                        aci = k
                        break
                qual = 0.0
                for k in range(K):
                    qual += xb[k] * q[k]
            else:
                aci = ci
                if ci >= 0:
                    qual = q[ci]
                else:
                    qual = 0.0
                    for k in range(K):
                        qual += mixw[s1, i1, k] * q[k]
            # Web feedback: thinned by alpha, lineage forced on
            s, u = _rand(s)
            if u < pf[PF_ALPHA]:
                if aci >= 0:
                    p = acc[FL_A, aci]
                else:
                    p = (qual + bias[FL_A]) / denom[FL_A]
                s, u = _rand(s)
                if u < p:
                    n = nn[W]
                    col[W, n] = aci
                    org[W, n] = ORG_A_USED
                    lin[W, n] = 1
                    birth[W, n] = t
                    cid[W, n] = misc[0]
                    misc[0] += 1
                    if aci == -2:
                        for k in range(K):
                            mixw[W, n, k] = xb[k] if blended else mixw[s1, i1, k]
                    nn[W] = n + 1
            # LLM feedback: thinned by beta, lineage inherited
            s, u = _rand(s)
            if u < pf[PF_BETA]:
                if aci >= 0:
                    p = acc[FL_F, aci]
                else:
                    p = (qual + bias[FL_F]) / denom[FL_F]
                s, u = _rand(s)
                if u < p:
                    n = nn[L]
                    col[L, n] = aci
                    org[L, n] = ORG_F_FEEDBACK
                    lin[L, n] = li
                    birth[L, n] = t
                    cid[L, n] = misc[0]
                    misc[0] += 1
                    if aci == -2:
                        for k in range(K):
                            mixw[L, n, k] = xb[k] if blended else mixw[s1, i1, k]
                    nn[L] = n + 1

        else:
            # deaths: remove a uniformly chosen coupon (swap with the last)
            ds = kind - CH_DEATH_W
            s, u = _rand(s)
            i = int(u * nn[ds])
            n = nn[ds] - 1
            if ds == S and col[ds, i] == -1:
                nblack[0] -= 1
            if i != n:
                col[ds, i] = col[ds, n]
                org[ds, i] = org[ds, n]
                lin[ds, i] = lin[ds, n]
                birth[ds, i] = birth[ds, n]
                cid[ds, i] = cid[ds, n]
                if col[ds, i] == -2:
                    for k in range(K):
                        mixw[ds, i, k] = mixw[ds, n, k]
            nn[ds] = n


@njit(cache=True)
def _snap_scan(gi, col, org, lin, mixw, nn, qcnt, good, o_counts, o_lin,
               o_goodm, o_used_s, o_used_a, o_uclass, o_umass, o_scal, o_q,
               o_n):
    """Aggregate the current compartments into snapshot slot gi.

    counts bin blended coupons by dominant color; good_mass sums the
    renormalized good-color weights of relevant-classified coupons;
    used-answer tallies split by source flow and classification (Web only),
    with the bad-color mass of used answers accumulated alongside (equal to
    the irrelevant count when every coupon is pure).
    """
    K = good.shape[0]
    for s in range(4):
        for k in range(K):
            o_counts[gi, s, k] = 0
            o_lin[gi, s, k] = 0
            o_goodm[gi, s, k] = 0.0
        o_scal[gi, s, 0] = 0
        o_scal[gi, s, 1] = 0
        o_n[gi, s] = nn[s]
    for k in range(K):
        o_used_s[gi, k] = 0
        o_used_a[gi, k] = 0
    for j in range(4):
        o_uclass[gi, j] = 0
        o_q[gi, j] = qcnt[j]
    o_umass[gi, 0] = 0.0
    o_umass[gi, 1] = 0.0
    for s in range(4):
        for i in range(nn[s]):
            ci = col[s, i]
            if ci == -1:
                o_scal[gi, s, 1] += 1
                continue
            if ci >= 0:
                dom = ci
                rel = good[ci] != 0
                badm = 0.0 if rel else 1.0
            else:
                dom = 0
                best = mixw[s, i, 0]
                for k in range(1, K):
                    if mixw[s, i, k] > best:
                        best = mixw[s, i, k]
                        dom = k
                badm = 0.0
                for k in range(K):
                    if good[k] == 0:
                        badm += mixw[s, i, k]
                rel = badm <= 0.5
            o_counts[gi, s, dom] += 1
            if lin[s, i] != 0:
                o_lin[gi, s, dom] += 1
            if rel:
                o_scal[gi, s, 0] += 1
                if ci >= 0:
                    o_goodm[gi, s, ci] += 1.0
                else:
                    gs = 1.0 - badm
                    for k in range(K):
                        if good[k] != 0:
                            o_goodm[gi, s, k] += mixw[s, i, k] / gs
            if s == W:
                o = org[s, i]
                if o == ORG_S_USED:
                    o_used_s[gi, dom] += 1
                    o_umass[gi, 0] += badm
                    if rel:
                        o_uclass[gi, 0] += 1
                    else:
                        o_uclass[gi, 1] += 1
                elif o == ORG_A_USED:
                    o_used_a[gi, dom] += 1
                    o_umass[gi, 1] += badm
                    if rel:
                        o_uclass[gi, 2] += 1
                    else:
                        o_uclass[gi, 3] += 1


@njit(cache=True)
def _run(col, org, lin, birth, cid, mixw, nn, qcnt, nblack, misc, pf, pi,
         acc, bias, denom, q, good, gcum, rs, tarr, rates, xb, pend, resume,
         lastkind, grid, gi_start, o_counts, o_lin, o_goodm, o_used_s,
         o_used_a, o_uclass, o_umass, o_scal, o_q, o_n):
    """Drive bursts across the sample grid, starting at grid index gi_start.

    Snapshots record the state holding just before each grid instant (the
    state is piecewise constant between events). Returns (status, gi):
    OVERFLOW asks the caller to grow storage and re-enter at gi; HALTED
    froze the state and filled the remaining snapshots; OK covered the
    whole grid.
    """
    G = grid.shape[0]
    gi = gi_start
    big = 1 << 62
    while gi < G:
        status, _ = _burst(col, org, lin, birth, cid, mixw, nn, qcnt, nblack,
                           misc, pf, pi, acc, bias, denom, q, good, gcum, rs,
                           tarr, rates, xb, pend, resume, lastkind,
                           grid[gi], big)
        if status == OVERFLOW:
            return OVERFLOW, gi
        if status == HALTED:
            while gi < G:
                _snap_scan(gi, col, org, lin, mixw, nn, qcnt, good, o_counts,
                           o_lin, o_goodm, o_used_s, o_used_a, o_uclass,
                           o_umass, o_scal, o_q, o_n)
                gi += 1
            return HALTED, gi
        # PENDING: the next event lands past grid[gi]
        resume[0] = 1
        while gi < G and grid[gi] <= pend[0]:
            _snap_scan(gi, col, org, lin, mixw, nn, qcnt, good, o_counts,
                       o_lin, o_goodm, o_used_s, o_used_a, o_uclass,
                       o_umass, o_scal, o_q, o_n)
            gi += 1
    return OK, gi
