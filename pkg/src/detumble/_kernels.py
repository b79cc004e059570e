"""Jitted numerical core: planar kinematics, dynamics assembly, contact, integration.

All kernels operate on flat float64 arrays so they stay signature-stable for
numba. Generalized coordinates are q = [x_b, y_b, th_b, phi_L1..3, phi_R1..3]
(9,) with matching rates qd; the target is [x, y, th] / [vx, vy, w].

Frame conventions:
  - base frame origin at the base COG, pose = q[0:3]
  - arm k mount at (s_k * mount_x, mount_y) in the base frame, s_L = -1, s_R = +1
  - at zero joint angles an arm is straight along the base +y axis
  - link i local frame: origin at its proximal joint, +y toward the distal end
  - effector frame: origin at the wrist (third joint), angle = link-3 absolute
    angle; tip sphere centres at (+-lc/2, ld) in that frame
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Layout of the packed model-parameter vector.
MP_M_BASE = 0    # base mass
MP_I_BASE = 1    # base inertia about its COG
MP_HALF_X = 2    # base rectangle half extent along body x
MP_HALF_Y = 3    # base rectangle half extent along body y
MP_COG_OFF = 4   # base COG y-offset: rectangle centre at (0, -off) in base frame
MP_MOUNT_X = 5   # arm mount |x| in base frame
MP_MOUNT_Y = 6   # arm mount y in base frame
MP_M1, MP_M2, MP_M3 = 7, 8, 9        # link masses (same both arms)
MP_I1, MP_I2, MP_I3 = 10, 11, 12     # link inertias
MP_L1, MP_L2 = 13, 14                # link 1/2 lengths (link 3 is the U shape)
MP_C1, MP_C2, MP_C3 = 15, 16, 17     # link COG offsets along local +y
MP_LC = 18       # effector tip-to-tip width
MP_LD = 19       # effector depth, wrist to tip-centre line
MP_TIP_R = 20    # tip sphere radius
MP_M_T = 21      # target mass
MP_I_T = 22      # target inertia
MP_SIDE_T = 23   # target square side length
MP_SIZE = 24

NQ = 9  # chaser generalized coordinates


@njit(cache=True)
def fk(mp, q):
    """Forward kinematics of the whole chaser.

    Returns (joints, angles, coms, tips, eff):
      joints (2,3,2)  joint positions per arm (mount, elbow, wrist)
      angles (2,3)    absolute link angles
      coms   (7,2)    body COG positions, order: base, L1..L3, R1..R3
      tips   (2,2,2)  tip sphere centres, tips[arm, 0] on the local +x side
      eff    (2,3)    effector pose (x, y, th) per arm
    """
    joints = np.empty((2, 3, 2))
    angles = np.empty((2, 3))
    coms = np.empty((7, 2))
    tips = np.empty((2, 2, 2))
    eff = np.empty((2, 3))

    xb, yb, thb = q[0], q[1], q[2]
    coms[0, 0] = xb
    coms[0, 1] = yb
    cb, sb = np.cos(thb), np.sin(thb)

    lens = (mp[MP_L1], mp[MP_L2])
    cogs = (mp[MP_C1], mp[MP_C2], mp[MP_C3])
    lc2 = 0.5 * mp[MP_LC]
    ld = mp[MP_LD]

    for k in range(2):
        sgn = -1.0 if k == 0 else 1.0
        mx = sgn * mp[MP_MOUNT_X]
        my = mp[MP_MOUNT_Y]
        # mount point in world
        px = xb + cb * mx - sb * my
        py = yb + sb * mx + cb * my
        a = thb
        for i in range(3):
            a += q[3 + 3 * k + i]
            angles[k, i] = a
            joints[k, i, 0] = px
            joints[k, i, 1] = py
            ca, sa = np.cos(a), np.sin(a)
            # COG at (0, c_i) in the link frame
            c = cogs[i]
            coms[1 + 3 * k + i, 0] = px - sa * c
            coms[1 + 3 * k + i, 1] = py + ca * c
            if i < 2:
                L = lens[i]
                px = px - sa * L
                py = py + ca * L
        # effector frame at the wrist
        a3 = angles[k, 2]
        c3, s3 = np.cos(a3), np.sin(a3)
        eff[k, 0] = px
        eff[k, 1] = py
        eff[k, 2] = a3
        for s in range(2):
            ox = lc2 if s == 0 else -lc2
            tips[k, s, 0] = px + c3 * ox - s3 * ld
            tips[k, s, 1] = py + s3 * ox + c3 * ld
    return joints, angles, coms, tips, eff


@njit(cache=True)
def body_jacobians(mp, q):
    """Translational (7,2,9) and rotational (7,9) Jacobians of every body COG."""
    joints, angles, coms, tips, eff = fk(mp, q)
    jv = np.zeros((7, 2, 9))
    jw = np.zeros((7, 9))
    xb, yb = q[0], q[1]

    # base
    jv[0, 0, 0] = 1.0
    jv[0, 1, 1] = 1.0
    jw[0, 2] = 1.0

    for k in range(2):
        for i in range(3):
            b = 1 + 3 * k + i
            rx, ry = coms[b, 0], coms[b, 1]
            jv[b, 0, 0] = 1.0
            jv[b, 1, 1] = 1.0
            jv[b, 0, 2] = -(ry - yb)
            jv[b, 1, 2] = rx - xb
            jw[b, 2] = 1.0
            for j in range(i + 1):
                col = 3 + 3 * k + j
                jv[b, 0, col] = -(ry - joints[k, j, 1])
                jv[b, 1, col] = rx - joints[k, j, 0]
                jw[b, col] = 1.0
    return jv, jw


@njit(cache=True)
def assemble_h(mp, q):
    """Generalized inertia matrix (9,9) by composite body Jacobians."""
    jv, jw = body_jacobians(mp, q)
    masses = np.empty(7)
    inertias = np.empty(7)
    masses[0] = mp[MP_M_BASE]
    inertias[0] = mp[MP_I_BASE]
    for k in range(2):
        masses[1 + 3 * k] = mp[MP_M1]
        masses[2 + 3 * k] = mp[MP_M2]
        masses[3 + 3 * k] = mp[MP_M3]
        inertias[1 + 3 * k] = mp[MP_I1]
        inertias[2 + 3 * k] = mp[MP_I2]
        inertias[3 + 3 * k] = mp[MP_I3]

    H = np.zeros((9, 9))
    for b in range(7):
        m = masses[b]
        Ib = inertias[b]
        for r in range(9):
            jvxr = jv[b, 0, r]
            jvyr = jv[b, 1, r]
            jwr = jw[b, r]
            if jvxr == 0.0 and jvyr == 0.0 and jwr == 0.0:
                continue
            for cidx in range(r, 9):
                v = m * (jvxr * jv[b, 0, cidx] + jvyr * jv[b, 1, cidx])
                v += Ib * jwr * jw[b, cidx]
                H[r, cidx] += v
    for r in range(9):
        for cidx in range(r + 1, 9):
            H[cidx, r] = H[r, cidx]
    return H


@njit(cache=True)
def nonlinear(mp, q, qd):
    """Velocity-product generalized forces c(q, qd) with zero gravity.

    In the plane every body's bias acceleration (qdd = 0) is purely centripetal,
    so c reduces to sum_b m_b Jv_b^T a_b with a_b accumulated along the chain.
    """
    joints, angles, coms, tips, eff = fk(mp, q)
    jv, jw = body_jacobians(mp, q)

    xb, yb, thb = q[0], q[1], q[2]
    wb = qd[2]
    cb, sb = np.cos(thb), np.sin(thb)
    lens = (mp[MP_L1], mp[MP_L2])
    cogs = (mp[MP_C1], mp[MP_C2], mp[MP_C3])
    masses = (mp[MP_M1], mp[MP_M2], mp[MP_M3])

    c = np.zeros(9)
    for k in range(2):
        sgn = -1.0 if k == 0 else 1.0
        mx = sgn * mp[MP_MOUNT_X]
        my = mp[MP_MOUNT_Y]
        # accumulated centripetal acceleration of the current joint
        ax = -wb * wb * (cb * mx - sb * my)
        ay = -wb * wb * (sb * mx + cb * my)
        w = wb
        for i in range(3):
            w += qd[3 + 3 * k + i]
            a = angles[k, i]
            ca, sa = np.cos(a), np.sin(a)
            cg = cogs[i]
            acx = ax - w * w * (-sa * cg)
            acy = ay - w * w * (ca * cg)
            b = 1 + 3 * k + i
            m = masses[i]
            for col in range(9):
                jx = jv[b, 0, col]
                jy = jv[b, 1, col]
                if jx != 0.0 or jy != 0.0:
                    c[col] += m * (jx * acx + jy * acy)
            if i < 2:
                L = lens[i]
                ax -= w * w * (-sa * L)
                ay -= w * w * (ca * L)
    return c


@njit(cache=True)
def momentum_origin(mp, q, qd):
    """Chaser linear momentum and angular momentum about the inertial origin."""
    jv, jw = body_jacobians(mp, q)
    joints, angles, coms, tips, eff = fk(mp, q)
    masses = np.empty(7)
    inertias = np.empty(7)
    masses[0] = mp[MP_M_BASE]
    inertias[0] = mp[MP_I_BASE]
    for k in range(2):
        masses[1 + 3 * k] = mp[MP_M1]
        masses[2 + 3 * k] = mp[MP_M2]
        masses[3 + 3 * k] = mp[MP_M3]
        inertias[1 + 3 * k] = mp[MP_I1]
        inertias[2 + 3 * k] = mp[MP_I2]
        inertias[3 + 3 * k] = mp[MP_I3]
    px = 0.0
    py = 0.0
    L = 0.0
    for b in range(7):
        vx = 0.0
        vy = 0.0
        w = 0.0
        for col in range(9):
            vx += jv[b, 0, col] * qd[col]
            vy += jv[b, 1, col] * qd[col]
            w += jw[b, col] * qd[col]
        m = masses[b]
        px += m * vx
        py += m * vy
        L += coms[b, 0] * m * vy - coms[b, 1] * m * vx + inertias[b] * w
    return px, py, L


@njit(cache=True)
def arm_jacobians(mp, q, arm):
    """Fixed-base arm Jacobian J_m (3,3) and base Jacobian J_b (3,3) of one effector."""
    joints, angles, coms, tips, eff = fk(mp, q)
    hx, hy = eff[arm, 0], eff[arm, 1]
    jm = np.zeros((3, 3))
    for j in range(3):
        jm[0, j] = -(hy - joints[arm, j, 1])
        jm[1, j] = hx - joints[arm, j, 0]
        jm[2, j] = 1.0
    jb = np.zeros((3, 3))
    jb[0, 0] = 1.0
    jb[1, 1] = 1.0
    jb[2, 2] = 1.0
    jb[0, 2] = -(hy - q[1])
    jb[1, 2] = hx - q[0]
    return jm, jb


@njit(cache=True)
def manipulability(mp, q, arm):
    """sqrt(det(J J^T)) for the translational rows of the fixed-base arm Jacobian."""
    jm, jb = arm_jacobians(mp, q, arm)
    a = jm[0, 0] * jm[0, 0] + jm[0, 1] * jm[0, 1] + jm[0, 2] * jm[0, 2]
    b = jm[0, 0] * jm[1, 0] + jm[0, 1] * jm[1, 1] + jm[0, 2] * jm[1, 2]
    d = jm[1, 0] * jm[1, 0] + jm[1, 1] * jm[1, 1] + jm[1, 2] * jm[1, 2]
    det = a * d - b * b
    if det < 0.0:
        det = 0.0
    return np.sqrt(det)


@njit(cache=True)
def generalized_jacobian(mp, q, qd):
    """Free-floating resolved-rate data.

    Returns (jstar (6,6), corr (6,), smin) where the commanded joint rates
    solve jstar @ phidot = xdot_des - corr, corr being the momentum feed
    J_b H_b^-1 P per arm, and smin the smallest singular value of jstar.
    """
    H = assemble_h(mp, q)
    Hb = H[0:3, 0:3].copy()
    P = np.zeros(3)
    for r in range(3):
        s = 0.0
        for cidx in range(9):
            s += H[r, cidx] * qd[cidx]
        P[r] = s

    # solve Hb X = [Hbm_L | Hbm_R | P]
    rhs = np.empty((3, 7))
    for r in range(3):
        for cidx in range(3):
            rhs[r, cidx] = H[r, 3 + cidx]
            rhs[r, 3 + cidx] = H[r, 6 + cidx]
        rhs[r, 6] = P[r]
    X = np.linalg.solve(Hb, rhs)
    # contiguous copies: numba's matmul on strided views is extremely slow
    XL = X[:, 0:3].copy()
    XR = X[:, 3:6].copy()
    xp = X[:, 6].copy()

    jmL, jbL = arm_jacobians(mp, q, 0)
    jmR, jbR = arm_jacobians(mp, q, 1)

    jstar = np.empty((6, 6))
    jstar[0:3, 0:3] = jmL - jbL @ XL
    jstar[0:3, 3:6] = -(jbL @ XR)
    jstar[3:6, 0:3] = -(jbR @ XL)
    jstar[3:6, 3:6] = jmR - jbR @ XR

    corr = np.empty(6)
    corr[0:3] = jbL @ xp
    corr[3:6] = jbR @ xp

    sv = np.linalg.svd(jstar)[1]
    smin = sv[5]
    return jstar, corr, smin


@njit(cache=True)
def contact_snapshot(mp, kp, cp, mu, q, qd, tgt):
    """Tip-sphere vs target-square penalty contacts at the current state.

    Returns (active (4,) u8, pen (4,), pendot (4,), vtrel (4,), normal (4,2),
    point (4,2), ftip (4,2), qc (9,), ftgt (3,), fh (2,3)).

    Tip row order: L tip0, L tip1, R tip0, R tip1. qc is the generalized force
    on the chaser, ftgt the wrench on the target about its COG, fh the net
    contact wrench per arm about the effector frame origin.
    """
    joints, angles, coms, tips, eff = fk(mp, q)
    active = np.zeros(4, dtype=np.uint8)
    pen = np.zeros(4)
    pendot = np.zeros(4)
    vtrel = np.zeros(4)
    normal = np.zeros((4, 2))
    point = np.zeros((4, 2))
    ftip = np.zeros((4, 2))
    qc = np.zeros(9)
    ftgt = np.zeros(3)
    fh = np.zeros((2, 3))

    h = 0.5 * mp[MP_SIDE_T]
    rtip = mp[MP_TIP_R]
    xt, yt, tht = tgt[0], tgt[1], tgt[2]
    vxt, vyt, wt = tgt[3], tgt[4], tgt[5]
    ct, st = np.cos(tht), np.sin(tht)
    xb, yb = q[0], q[1]

    for k in range(2):
        for s in range(2):
            row = 2 * k + s
            cx, cy = tips[k, s, 0], tips[k, s, 1]
            # target-frame coordinates of the sphere centre
            dxw, dyw = cx - xt, cy - yt
            lx = ct * dxw + st * dyw
            ly = -st * dxw + ct * dyw
            qx = abs(lx) - h
            qy = abs(ly) - h
            if qx > 0.0 or qy > 0.0:
                # centre outside: closest point on the square boundary
                clx = lx if abs(lx) <= h else (h if lx > 0.0 else -h)
                cly = ly if abs(ly) <= h else (h if ly > 0.0 else -h)
                ddx = lx - clx
                ddy = ly - cly
                dist = np.sqrt(ddx * ddx + ddy * ddy)
                if dist > rtip:
                    continue
                if dist > 1e-12:
                    nlx = ddx / dist
                    nly = ddy / dist
                else:
                    if qx > qy:
                        nlx = 1.0 if lx > 0.0 else -1.0
                        nly = 0.0
                    else:
                        nlx = 0.0
                        nly = 1.0 if ly > 0.0 else -1.0
                delta = rtip - dist
            else:
                # centre inside: push out across the nearest face
                if qx > qy:
                    nlx = 1.0 if lx >= 0.0 else -1.0
                    nly = 0.0
                    clx = nlx * h
                    cly = ly
                    delta = rtip - qx
                else:
                    nlx = 0.0
                    nly = 1.0 if ly >= 0.0 else -1.0
                    clx = lx
                    cly = nly * h
                    delta = rtip - qy
            # back to world frame
            nx = ct * nlx - st * nly
            ny = st * nlx + ct * nly
            pxw = xt + ct * clx - st * cly
            pyw = yt + st * clx + ct * cly

            # tip material-point velocity
            vx = qd[0] - qd[2] * (cy - yb)
            vy = qd[1] + qd[2] * (cx - xb)
            for j in range(3):
                rate = qd[3 + 3 * k + j]
                vx -= rate * (cy - joints[k, j, 1])
                vy += rate * (cx - joints[k, j, 0])
            # target surface-point velocity
            vtx = vxt - wt * (pyw - yt)
            vty = vyt + wt * (pxw - xt)
            rvx = vx - vtx
            rvy = vy - vty
            # penetration rate is the negative separation rate
            ddot = -(rvx * nx + rvy * ny)
            # tangent: 90 deg CCW from the normal
            tx, ty = -ny, nx
            vt = rvx * tx + rvy * ty

            active[row] = 1
            pen[row] = delta
            pendot[row] = ddot
            vtrel[row] = vt
            normal[row, 0] = nx
            normal[row, 1] = ny
            point[row, 0] = pxw
            point[row, 1] = pyw

            fn = kp * delta + cp * ddot
            if fn < 0.0:
                fn = 0.0
            # kinetic Coulomb friction, linearly regularized near zero slip so
            # the sign switching cannot chatter energy into a resting contact
            sgn_vt = vt / 1e-3
            if sgn_vt > 1.0:
                sgn_vt = 1.0
            elif sgn_vt < -1.0:
                sgn_vt = -1.0
            ft = -sgn_vt * mu * fn
            fx = fn * nx + ft * tx
            fy = fn * ny + ft * ty
            ftip[row, 0] = fx
            ftip[row, 1] = fy

            # chaser generalized force (force acts at the contact point)
            qc[0] += fx
            qc[1] += fy
            qc[2] += (pxw - xb) * fy - (pyw - yb) * fx
            for j in range(3):
                col = 3 + 3 * k + j
                qc[col] += (pxw - joints[k, j, 0]) * fy - (pyw - joints[k, j, 1]) * fx
            # target reaction
            ftgt[0] -= fx
            ftgt[1] -= fy
            ftgt[2] -= (pxw - xt) * fy - (pyw - yt) * fx
            # sensed effector wrench
            fh[k, 0] += fx
            fh[k, 1] += fy
            fh[k, 2] += (pxw - eff[k, 0]) * fy - (pyw - eff[k, 1]) * fx
    return active, pen, pendot, vtrel, normal, point, ftip, qc, ftgt, fh


@njit(cache=True)
def _accel(mp, kp, cp, mu, kps, kds, q, qd, tgt, phi_ref, phi_cmd):
    """Accelerations under joint velocity servo torques plus live contact."""
    H = assemble_h(mp, q)
    c = nonlinear(mp, q, qd)
    res = contact_snapshot(mp, kp, cp, mu, q, qd, tgt)
    qc = res[7]
    ftgt = res[8]
    rhs = np.empty(9)
    for i in range(9):
        rhs[i] = qc[i] - c[i]
    for j in range(6):
        tau = kps * (phi_ref[j] - q[3 + j]) + kds * (phi_cmd[j] - qd[3 + j])
        rhs[3 + j] += tau
    qdd = np.linalg.solve(H, rhs)
    tacc = np.empty(3)
    tacc[0] = ftgt[0] / mp[MP_M_T]
    tacc[1] = ftgt[1] / mp[MP_M_T]
    tacc[2] = ftgt[2] / mp[MP_I_T]
    return qdd, tacc


@njit(cache=True)
def step_servo_rk4(mp, kp, cp, mu, kps, kds, q, qd, tgt, phi_ref, phi_cmd, dt):
    """One RK4 step of chaser + target under servo torques and penalty contact.

    phi_ref is the servo position reference at step start; it advances with
    phi_cmd inside the stages. Returns (q1, qd1, tgt1).
    """
    q0 = q
    qd0 = qd
    tp0 = tgt[0:3]
    tv0 = tgt[3:6]

    buf = np.empty(6)

    # stage 1
    k1q = qd0
    k1qd, k1tv = _accel(mp, kp, cp, mu, kps, kds, q0, qd0, tgt, phi_ref, phi_cmd)
    k1tp = tv0

    # stage 2
    qa = q0 + 0.5 * dt * k1q
    qda = qd0 + 0.5 * dt * k1qd
    buf[0:3] = tp0 + 0.5 * dt * k1tp
    buf[3:6] = tv0 + 0.5 * dt * k1tv
    ref = phi_ref + 0.5 * dt * phi_cmd
    k2q = qda
    k2qd, k2tv = _accel(mp, kp, cp, mu, kps, kds, qa, qda, buf, ref, phi_cmd)
    k2tp = buf[3:6].copy()

    # stage 3
    qa = q0 + 0.5 * dt * k2q
    qda = qd0 + 0.5 * dt * k2qd
    buf[0:3] = tp0 + 0.5 * dt * k2tp
    buf[3:6] = tv0 + 0.5 * dt * k2tv
    k3q = qda
    k3qd, k3tv = _accel(mp, kp, cp, mu, kps, kds, qa, qda, buf, ref, phi_cmd)
    k3tp = buf[3:6].copy()

    # stage 4
    qa = q0 + dt * k3q
    qda = qd0 + dt * k3qd
    buf[0:3] = tp0 + dt * k3tp
    buf[3:6] = tv0 + dt * k3tv
    ref = phi_ref + dt * phi_cmd
    k4q = qda
    k4qd, k4tv = _accel(mp, kp, cp, mu, kps, kds, qa, qda, buf, ref, phi_cmd)
    k4tp = buf[3:6].copy()

    w = dt / 6.0
    q1 = q0 + w * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    qd1 = qd0 + w * (k1qd + 2.0 * k2qd + 2.0 * k3qd + k4qd)
    tgt1 = np.empty(6)
    tgt1[0:3] = tp0 + w * (k1tp + 2.0 * k2tp + 2.0 * k3tp + k4tp)
    tgt1[3:6] = tv0 + w * (k1tv + 2.0 * k2tv + 2.0 * k3tv + k4tv)
    return q1, qd1, tgt1


@njit(cache=True)
def step_servo_semi(mp, kp, cp, mu, kps, kds, q, qd, tgt, phi_ref, phi_cmd, dt):
    """Semi-implicit Euler variant of step_servo_rk4 (velocity first)."""
    qdd, tacc = _accel(mp, kp, cp, mu, kps, kds, q, qd, tgt, phi_ref, phi_cmd)
    qd1 = qd + dt * qdd
    q1 = q + dt * qd1
    tgt1 = np.empty(6)
    tgt1[3:6] = tgt[3:6] + dt * tacc
    tgt1[0:3] = tgt[0:3] + dt * tgt1[3:6]
    return q1, qd1, tgt1


@njit(cache=True)
def _accel_wrench(mp, q, qd, tgt, tau, fb, fhl, fhr, ftw):
    """Accelerations under explicit applied wrenches (no contact, no servo).

    Effector wrenches act at the effector frame origins; fb at the base COG;
    ftw at the target COG.
    """
    H = assemble_h(mp, q)
    c = nonlinear(mp, q, qd)
    joints, angles, coms, tips, eff = fk(mp, q)
    rhs = -c
    rhs[0] += fb[0]
    rhs[1] += fb[1]
    rhs[2] += fb[2]
    for j in range(6):
        rhs[3 + j] += tau[j]
    xb, yb = q[0], q[1]
    for k in range(2):
        fv = fhl if k == 0 else fhr
        hx, hy = eff[k, 0], eff[k, 1]
        fx, fy, tz = fv[0], fv[1], fv[2]
        rhs[0] += fx
        rhs[1] += fy
        rhs[2] += (hx - xb) * fy - (hy - yb) * fx + tz
        for j in range(3):
            col = 3 + 3 * k + j
            rhs[col] += (hx - joints[k, j, 0]) * fy - (hy - joints[k, j, 1]) * fx + tz
    qdd = np.linalg.solve(H, rhs)
    tacc = np.empty(3)
    tacc[0] = ftw[0] / mp[MP_M_T]
    tacc[1] = ftw[1] / mp[MP_M_T]
    tacc[2] = ftw[2] / mp[MP_I_T]
    return qdd, tacc


@njit(cache=True)
def step_wrench_rk4(mp, q, qd, tgt, tau, fb, fhl, fhr, ftw, dt):
    """RK4 step with constant applied wrenches over the step."""
    tp0 = tgt[0:3]
    tv0 = tgt[3:6]
    buf = np.empty(6)

    k1q = qd
    k1qd, k1tv = _accel_wrench(mp, q, qd, tgt, tau, fb, fhl, fhr, ftw)
    k1tp = tv0

    qa = q + 0.5 * dt * k1q
    qda = qd + 0.5 * dt * k1qd
    buf[0:3] = tp0 + 0.5 * dt * k1tp
    buf[3:6] = tv0 + 0.5 * dt * k1tv
    k2q = qda
    k2qd, k2tv = _accel_wrench(mp, qa, qda, buf, tau, fb, fhl, fhr, ftw)
    k2tp = buf[3:6].copy()

    qa = q + 0.5 * dt * k2q
    qda = qd + 0.5 * dt * k2qd
    buf[0:3] = tp0 + 0.5 * dt * k2tp
    buf[3:6] = tv0 + 0.5 * dt * k2tv
    k3q = qda
    k3qd, k3tv = _accel_wrench(mp, qa, qda, buf, tau, fb, fhl, fhr, ftw)
    k3tp = buf[3:6].copy()

    qa = q + dt * k3q
    qda = qd + dt * k3qd
    buf[0:3] = tp0 + dt * k3tp
    buf[3:6] = tv0 + dt * k3tv
    k4q = qda
    k4qd, k4tv = _accel_wrench(mp, qa, qda, buf, tau, fb, fhl, fhr, ftw)
    k4tp = buf[3:6].copy()

    w = dt / 6.0
    q1 = q + w * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    qd1 = qd + w * (k1qd + 2.0 * k2qd + 2.0 * k3qd + k4qd)
    tgt1 = np.empty(6)
    tgt1[0:3] = tp0 + w * (k1tp + 2.0 * k2tp + 2.0 * k3tp + k4tp)
    tgt1[3:6] = tv0 + w * (k1tv + 2.0 * k2tv + 2.0 * k3tv + k4tv)
    return q1, qd1, tgt1


@njit(cache=True)
def obb_overlap(c1x, c1y, th1, hx1, hy1, c2x, c2y, th2, hx2, hy2):
    """Separating-axis test for two oriented rectangles."""
    dx = c2x - c1x
    dy = c2y - c1y
    c1, s1 = np.cos(th1), np.sin(th1)
    c2, s2 = np.cos(th2), np.sin(th2)
    axes = np.empty((4, 2))
    axes[0, 0], axes[0, 1] = c1, s1
    axes[1, 0], axes[1, 1] = -s1, c1
    axes[2, 0], axes[2, 1] = c2, s2
    axes[3, 0], axes[3, 1] = -s2, c2
    for i in range(4):
        ax, ay = axes[i, 0], axes[i, 1]
        r1 = hx1 * abs(ax * c1 + ay * s1) + hy1 * abs(-ax * s1 + ay * c1)
        r2 = hx2 * abs(ax * c2 + ay * s2) + hy2 * abs(-ax * s2 + ay * c2)
        if abs(ax * dx + ay * dy) > r1 + r2:
            return False
    return True
