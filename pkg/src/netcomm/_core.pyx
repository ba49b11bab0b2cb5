# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Native round loop.

Mirrors ``netcomm.engine.PythonEngine`` operation for operation: the same
SplitMix64 draws in the same order, the same flat parameter layout, the same
update arithmetic. Only floating-point summation order inside the
matrix products differs.
"""

from libc.math cimport sqrt, pow, isfinite
from libc.stdint cimport uint64_t, int64_t



cdef enum:
    NIN = 9
    H1 = 25
    H2 = 15
    NOUT = 4
    MAXB = 1024
    OW1 = 0
    OB1 = 225
    OW2 = 250
    OB2 = 625
    OWA = 640
    OBA = 700
    OWM = 704
    OBM = 764
    NPAR = 768

# flat parameter offsets above match neuralnet.layout(9)

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t next_u64(uint64_t* s) nogil:
    cdef uint64_t z
    s[0] = s[0] + GOLDEN
    z = s[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double uniform(uint64_t* s) nogil:
    return <double>(next_u64(s) >> 11) * (1.0 / 9007199254740992.0)


cdef inline int64_t randbelow(uint64_t* s, int64_t n) nogil:
    return <int64_t>(((next_u64(s) >> 32) * <uint64_t>n) >> 32)


cdef inline int argmax4(double* q) nogil:
    cdef int k, best = 0
    for k in range(1, NOUT):
        if q[k] > q[best]:
            best = k
    return best


cdef void forward(double* p, double* x, double* h1, double* h2, double* qa, double* qm) nogil:
    # i-outer loops keep each unit's summation order (inputs in index order,
    # bias last) while letting the compiler vectorize across units
    cdef int i, j, k
    cdef double xi
    for j in range(H1):
        h1[j] = 0.0
    for i in range(NIN):
        xi = x[i]
        for j in range(H1):
            h1[j] = h1[j] + xi * p[OW1 + i * H1 + j]
    for j in range(H1):
        xi = h1[j] + p[OB1 + j]
        h1[j] = xi if xi > 0.0 else 0.0
    for j in range(H2):
        h2[j] = 0.0
    for i in range(H1):
        xi = h1[i]
        for j in range(H2):
            h2[j] = h2[j] + xi * p[OW2 + i * H2 + j]
    for j in range(H2):
        xi = h2[j] + p[OB2 + j]
        h2[j] = xi if xi > 0.0 else 0.0
    for k in range(NOUT):
        qa[k] = 0.0
        qm[k] = 0.0
    for j in range(H2):
        xi = h2[j]
        for k in range(NOUT):
            qa[k] = qa[k] + xi * p[OWA + j * NOUT + k]
            qm[k] = qm[k] + xi * p[OWM + j * NOUT + k]
    for k in range(NOUT):
        qa[k] = qa[k] + p[OBA + k]
        qm[k] = qm[k] + p[OBM + k]


cdef void accumulate_grad(double* p, double* g, double* x, double* h1, double* h2,
                          double* da, double* dm) nogil:
    cdef int i, j, k
    cdef double acc
    cdef double dh2[H2]
    cdef double dh1[H1]
    for j in range(H2):
        acc = 0.0
        for k in range(NOUT):
            g[OWA + j * NOUT + k] += h2[j] * da[k]
            g[OWM + j * NOUT + k] += h2[j] * dm[k]
            acc = acc + da[k] * p[OWA + j * NOUT + k] + dm[k] * p[OWM + j * NOUT + k]
        dh2[j] = acc if h2[j] > 0.0 else 0.0
    for k in range(NOUT):
        g[OBA + k] += da[k]
        g[OBM + k] += dm[k]
    for i in range(H1):
        # a dead unit contributes exact zeros to every term below
        if h1[i] > 0.0:
            acc = 0.0
            for j in range(H2):
                g[OW2 + i * H2 + j] += h1[i] * dh2[j]
                acc = acc + dh2[j] * p[OW2 + i * H2 + j]
            dh1[i] = acc
        else:
            dh1[i] = 0.0
    for j in range(H2):
        g[OB2 + j] += dh2[j]
    for i in range(NIN):
        if x[i] != 0.0:
            for j in range(H1):
                g[OW1 + i * H1 + j] += x[i] * dh1[j]
    for j in range(H1):
        g[OB1 + j] += dh1[j]


cdef inline int64_t hist_push(int64_t[:, ::1] buf, int64_t[:, ::1] counts, int64_t[::1] pos,
                              int64_t[::1] size, int64_t agent, int64_t action) nogil:
    cdef int64_t cap = buf.shape[1]
    if size[agent] == cap:
        counts[agent, buf[agent, pos[agent]]] -= 1
    else:
        size[agent] += 1
    buf[agent, pos[agent]] = action
    counts[agent, action] += 1
    pos[agent] = (pos[agent] + 1) % cap
    return 0


cdef inline void proportions(int64_t[:, ::1] counts, int64_t[::1] size, int64_t agent, double* out) nogil:
    cdef int k
    if size[agent] == 0:
        for k in range(NOUT):
            out[k] = 1.0 / NOUT
    else:
        for k in range(NOUT):
            out[k] = <double>counts[agent, k] / <double>size[agent]


cdef inline double penalty(double p_hat) nogil:
    cdef double v = 0.25 - p_hat
    return v if v < 0.0 else 0.0


cdef class Kernel:
    """Packed population state plus the native round loop."""

    cdef public object pop
    cdef double rc, s, lr, b1, b2, adam_eps, eps_start, eps_end, decay_frac
    cdef int batch
    cdef bint ablate, use_adam

    def __init__(self, pop, double coordination_reward, double supervision_rate,
                 int batch_size, double learning_rate, bint use_adam,
                 double eps_start, double eps_end, double decay_fraction, bint ablate_channel,
                 double beta1=0.9, double beta2=0.999, double adam_eps=1e-8):
        if batch_size > MAXB:
            raise ValueError("batch_size too large for the native kernel")
        if pop.params.shape[1] != NPAR or pop.rep_x.shape[2] != NIN:
            raise ValueError("native kernel only supports the 9-input agent network")
        self.pop = pop
        self.rc = coordination_reward
        self.s = supervision_rate
        self.batch = batch_size
        self.lr = learning_rate
        self.use_adam = use_adam
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.decay_frac = decay_fraction
        self.ablate = ablate_channel
        self.b1 = beta1
        self.b2 = beta2
        self.adam_eps = adam_eps

    def run(self, int64_t start, int64_t stop, int64_t total_rounds, log):
        """Play rounds ``[start, stop)`` writing one log row per round at ``round - start``."""
        pop = self.pop
        cdef int64_t[::1] nbr_off = pop.nbr_offsets
        cdef int64_t[::1] nbr = pop.nbr_list
        cdef uint64_t[::1] shared = pop.shared_state
        cdef uint64_t[::1] policy = pop.policy_state
        cdef uint64_t[::1] memory = pop.memory_state
        cdef double[:, ::1] params = pop.params
        cdef double[:, ::1] am = pop.adam_m
        cdef double[:, ::1] av = pop.adam_v
        cdef int64_t[::1] at = pop.adam_t
        cdef double[:, :, ::1] rx = pop.rep_x
        cdef int64_t[:, ::1] rrole = pop.rep_role
        cdef int64_t[:, ::1] ract = pop.rep_action
        cdef int64_t[:, ::1] rmsg = pop.rep_message
        cdef double[:, ::1] rrew = pop.rep_reward
        cdef int64_t[:, ::1] rkind = pop.rep_kind
        cdef int64_t[:, ::1] rtgt = pop.rep_target
        cdef int64_t[::1] rstart = pop.rep_start
        cdef int64_t[::1] rsize = pop.rep_size
        cdef int64_t[:, ::1] hbuf = pop.hist_buf
        cdef int64_t[:, ::1] hcnt = pop.hist_counts
        cdef int64_t[::1] hpos = pop.hist_pos
        cdef int64_t[::1] hsize = pop.hist_size
        cdef double[::1] eps_out = pop.epsilon
        cdef double[::1] loss_out = pop.last_loss

        cdef int64_t[::1] l_round = log["round"]
        cdef int64_t[::1] l_spk = log["speaker"]
        cdef int64_t[::1] l_lis = log["listener"]
        cdef int64_t[::1] l_msg = log["message"]
        cdef int64_t[::1] l_rec = log["received"]
        cdef int64_t[::1] l_sa = log["speaker_action"]
        cdef int64_t[::1] l_la = log["listener_action"]
        cdef double[::1] l_rs = log["speaker_reward"]
        cdef double[::1] l_rl = log["listener_reward"]
        cdef int64_t[::1] l_ss = log["speaker_supervised"]
        cdef int64_t[::1] l_ls = log["listener_supervised"]

        cdef int64_t n = params.shape[0]
        cdef int64_t cap = rx.shape[1]
        cdef int64_t r, a, b, spk, lis, msg, rec, act_s, act_l, row, slot, agent, who, role_i
        cdef int64_t k, j, t, m, partner, own
        cdef double eps, horizon, u, loss, resid, ww
        cdef double xs[NIN]
        cdef double xl[NIN]
        cdef double ph_s[NOUT]
        cdef double ph_l[NOUT]
        cdef double h1[H1]
        cdef double h2[H2]
        cdef double qa[NOUT]
        cdef double qm[NOUT]
        cdef double da[NOUT]
        cdef double dm[NOUT]
        cdef double grad[NPAR]
        cdef int64_t chosen[MAXB]
        cdef int64_t n_chosen, n_terms, found
        cdef double r_s, r_l, bc1, bc2, mh, vh, tgt
        cdef bint coord, sup
        cdef double* p
        cdef int bad = -1
        cdef double bad_loss = 0.0

        if stop - start > l_round.shape[0]:
            raise ValueError("log buffer too small")

        with nogil:
            horizon = self.decay_frac * <double>total_rounds
            for r in range(start, stop):
                row = r - start
                a = randbelow(&shared[0], n)
                b = nbr[nbr_off[a] + randbelow(&shared[0], nbr_off[a + 1] - nbr_off[a])]
                if randbelow(&shared[1], 2) == 0:
                    spk = a
                    lis = b
                else:
                    spk = b
                    lis = a
                if <double>r >= horizon:
                    eps = self.eps_end
                else:
                    eps = self.eps_start - (self.eps_start - self.eps_end) * (<double>r / horizon)
                eps_out[spk] = eps
                eps_out[lis] = eps

                # speaker
                proportions(hcnt, hsize, spk, ph_s)
                xs[0] = 1.0
                for k in range(NOUT):
                    xs[1 + k] = uniform(&policy[spk])
                for k in range(NOUT):
                    xs[5 + k] = ph_s[k]
                forward(&params[spk, 0], xs, h1, h2, qa, qm)
                if uniform(&policy[spk]) < eps:
                    act_s = randbelow(&policy[spk], NOUT)
                else:
                    act_s = argmax4(qa)
                if uniform(&policy[spk]) < eps:
                    msg = randbelow(&policy[spk], NOUT)
                else:
                    msg = argmax4(qm)

                # listener
                if self.ablate:
                    rec = randbelow(&shared[2], NOUT)
                else:
                    rec = msg
                proportions(hcnt, hsize, lis, ph_l)
                xl[0] = 0.0
                for k in range(NOUT):
                    xl[1 + k] = 1.0 if k == rec else 0.0
                for k in range(NOUT):
                    xl[5 + k] = ph_l[k]
                forward(&params[lis, 0], xl, h1, h2, qa, qm)
                if uniform(&policy[lis]) < eps:
                    act_l = randbelow(&policy[lis], NOUT)
                else:
                    act_l = argmax4(qa)

                coord = act_s == act_l
                r_s = (self.rc if coord else 0.0) + penalty(ph_s[act_s])
                r_l = (self.rc if coord else 0.0) + penalty(ph_l[act_l])
                hist_push(hbuf, hcnt, hpos, hsize, spk, act_s)
                hist_push(hbuf, hcnt, hpos, hsize, lis, act_l)

                l_round[row] = r
                l_spk[row] = spk
                l_lis[row] = lis
                l_msg[row] = msg
                l_rec[row] = rec
                l_sa[row] = act_s
                l_la[row] = act_l
                l_rs[row] = r_s
                l_rl[row] = r_l

                # record (speaker first, then listener)
                for who in range(2):
                    if who == 0:
                        agent = spk
                        own = act_s
                        partner = act_l
                        m = msg
                        role_i = 1
                    else:
                        agent = lis
                        own = act_l
                        partner = act_s
                        m = rec
                        role_i = 0
                    sup = False
                    if not coord:
                        sup = uniform(&memory[agent]) < self.s
                    if rsize[agent] < cap:
                        slot = (rstart[agent] + rsize[agent]) % cap
                        rsize[agent] += 1
                    else:
                        slot = rstart[agent]
                        rstart[agent] = (rstart[agent] + 1) % cap
                    for k in range(NIN):
                        rx[agent, slot, k] = xs[k] if who == 0 else xl[k]
                    rrole[agent, slot] = role_i
                    ract[agent, slot] = own
                    rmsg[agent, slot] = m
                    rrew[agent, slot] = r_s if who == 0 else r_l
                    rkind[agent, slot] = 1 if sup else 0
                    rtgt[agent, slot] = partner if sup else -1
                    if who == 0:
                        l_ss[row] = 1 if sup else 0
                    else:
                        l_ls[row] = 1 if sup else 0

                # train (speaker first, then listener)
                for who in range(2):
                    agent = spk if who == 0 else lis
                    if rsize[agent] < self.batch:
                        continue
                    # Floyd sampling of logical indices, then ascending order
                    n_chosen = 0
                    for j in range(rsize[agent] - self.batch, rsize[agent]):
                        t = randbelow(&memory[agent], j + 1)
                        found = 0
                        for k in range(n_chosen):
                            if chosen[k] == t:
                                found = 1
                                break
                        chosen[n_chosen] = j if found else t
                        n_chosen += 1
                    for k in range(1, n_chosen):
                        t = chosen[k]
                        j = k - 1
                        while j >= 0 and chosen[j] > t:
                            chosen[j + 1] = chosen[j]
                            j -= 1
                        chosen[j + 1] = t

                    p = &params[agent, 0]
                    n_terms = 0
                    for k in range(n_chosen):
                        slot = (rstart[agent] + chosen[k]) % cap
                        n_terms += 2 if rrole[agent, slot] == 1 else 1
                    for k in range(NPAR):
                        grad[k] = 0.0
                    loss = 0.0
                    for k in range(n_chosen):
                        slot = (rstart[agent] + chosen[k]) % cap
                        forward(p, &rx[agent, slot, 0], h1, h2, qa, qm)
                        for j in range(NOUT):
                            da[j] = 0.0
                            dm[j] = 0.0
                        if rkind[agent, slot] == 1:
                            tgt = self.rc
                            j = rtgt[agent, slot]
                        else:
                            tgt = rrew[agent, slot]
                            j = ract[agent, slot]
                        resid = qa[j] - tgt
                        loss += resid * resid
                        da[j] = 2.0 * resid / <double>n_terms
                        if rrole[agent, slot] == 1:
                            j = rmsg[agent, slot]
                            resid = qm[j] - tgt
                            loss += resid * resid
                            dm[j] = 2.0 * resid / <double>n_terms
                        accumulate_grad(p, grad, &rx[agent, slot, 0], h1, h2, da, dm)
                    loss = loss / <double>n_terms
                    loss_out[agent] = loss
                    if not isfinite(loss):
                        bad = agent
                        bad_loss = loss
                        break
                    for k in range(NPAR):
                        if not isfinite(grad[k]):
                            bad = agent
                            bad_loss = loss
                            break
                    if bad >= 0:
                        break
                    if self.use_adam:
                        at[agent] += 1
                        bc1 = 1.0 - pow(self.b1, <double>at[agent])
                        bc2 = 1.0 - pow(self.b2, <double>at[agent])
                        for k in range(NPAR):
                            am[agent, k] = am[agent, k] * self.b1 + (1.0 - self.b1) * grad[k]
                            av[agent, k] = av[agent, k] * self.b2 + (1.0 - self.b2) * (grad[k] * grad[k])
                            mh = am[agent, k] / bc1
                            vh = av[agent, k] / bc2
                            p[k] = p[k] - self.lr * mh / (sqrt(vh) + self.adam_eps)
                    else:
                        for k in range(NPAR):
                            p[k] = p[k] - self.lr * grad[k]
                if bad >= 0:
                    break
        if bad >= 0:
            raise FloatingPointError(
                f"agent {bad}: non-finite training loss or gradient (loss={bad_loss}) at round {r}"
            )
        return stop
