#!/usr/bin/env python3
"""Independent reference computations for constants frozen into the C++ tests.

Every number printed here is derived from first principles with Python floats
(IEEE double, same as the library) so the tests can assert against values that
were *not* produced by the code under test.  Run:  python3 tools/derive_values.py
"""
import math

FMT = "%.17g"


def show(label, value):
    if isinstance(value, (list, tuple)):
        print(f"{label} = [{', '.join(FMT % v for v in value)}]")
    else:
        print(f"{label} = {FMT % value}")


def softmax(v):
    m = max(v)
    e = [math.exp(x - m) for x in v]
    s = sum(e)
    return [x / s for x in e]


print("== reporting-intercept softmax (d=11, intercepts 2,1.8,...,0.2,0) ==")
intercepts = [2.0 - 0.2 * j for j in range(11)]
p = softmax(intercepts)
show("intercepts", intercepts)
show("softmax", p)
show("p1", p[0])
show("sum", sum(p))

print()
print("== observed log-likelihood, single record ==")
# d=2, tau=1, lambda=2, p=(0.5,0.5), N_1=2:
#   -lambda*p1 + N1*log(lambda) + N1*log(p1) - log(N1!)
lam, p1, n1 = 2.0, 0.5, 2.0
ll = -lam * p1 + n1 * math.log(lam) + n1 * math.log(p1) - math.lgamma(n1 + 1)
show("observed_ll(lam=2,p=(.5,.5),tau=1,N1=2)", ll)
# equals log(2) - 2
show("log(2)-2", math.log(2.0) - 2.0)

print()
print("== complete log-likelihood, single record ==")
# d=2, lambda=2, p=(0.5,0.5), N=(2,1):  N_i = 3
# -lam + 3*log(2) + 2*log(.5) - log(2!) + 1*log(.5) - log(1!)
llc = -2.0 + 3.0 * math.log(2.0) + 2.0 * math.log(0.5) - math.lgamma(3.0) \
    + 1.0 * math.log(0.5) - math.lgamma(2.0)
show("complete_ll(lam=2,p=(.5,.5),N=(2,1))", llc)

print()
print("== EM initialization, d=2 two-record example ==")
# records: N = (3,.) tau=1 ; N = (3,2) tau=2
# lambda0: row sums over observed prefix -> 3 and 5
# p0_j = sum_z N_zj / sum_z sum_{j<=tau_z} N_zj = (6/8, 2/8)
show("lambda0", [3.0, 5.0])
show("p0", [6.0 / 8.0, 2.0 / 8.0])

print()
print("== E-step completion example ==")
# lambda_hat=4, p_hat=(0.5,0.3,0.2), tau=1, N_1=1  ->  N_2 = 4*.3, N_3 = 4*.2
show("completed tail", [4 * 0.3, 4 * 0.2])

print()
print("== intercept-only Poisson GLM ==")
# counts 1,2,3 with unit weights: beta0 = log(mean) = log(2)
show("log(2)", math.log(2.0))
# weighted: counts (1,2,3) weights (1,1,0.5) -> log( (1+2+1.5)/2.5 ) = log(1.8)
show("log(1.8)", math.log(1.8))

print()
print("== intercept-only multinomial GLM, d=2, counts (30,10) ==")
# reference class 2: eta_1 = log(30/10)
show("log(3)", math.log(3.0))
show("softmax([log3,0])", softmax([math.log(3.0), 0.0]))

print()
print("== q_rep example ==")
# one expanded event in class j with p_j = 1/11
show("log(1/11)", math.log(1.0 / 11.0))

print()
print("== GBT split-gain example (depth-1, two dyadic candidates) ==")
# rows: (x=0, g=-1, h=0.5), (x=1, g=2, h=1.0), (x=2, g=-2, h=0.5)
# parent: G=-1, H=2, score GP^2/HP = 0.5
# split at 0.5: L=(-1,.5) R=(0,1.5)  gain = 1/.5 + 0 - .5        = 1.5
# split at 1.5: L=(1,1.5) R=(-2,.5)  gain = 1/1.5 + 4/.5 - .5    = 8.1666...
show("gain@0.5", 1.0 / 0.5 + 0.0 / 1.5 - 0.5)
show("gain@1.5", 1.0 / 1.5 + 4.0 / 0.5 - 0.5)
show("leaf L", -1.0 / 1.5)
show("leaf R", 2.0 / 0.5)

print()
print("== Poisson gradient/hessian spot value ==")
# f=0.3, n=2: g = e^f - n, h = e^f
show("exp(0.3)", math.exp(0.3))
show("g=exp(0.3)-2", math.exp(0.3) - 2.0)

print()
print("== softmax gradient spot value (d=3, f=(0.1,-0.2,0), y=class1, w=2) ==")
sm = softmax([0.1, -0.2, 0.0])
show("softmax", sm)
show("G (w*(p-y))", [2 * (sm[0] - 1), 2 * sm[1], 2 * sm[2]])
show("H (w*p*(1-p))", [2 * s * (1 - s) for s in sm])

print()
print("== simulation-preset design widths ==")
# occurrence: 1 + (2-1) + 1 + (3-1) + (3-1) + 3 ps columns = 10
# reporting:  1 + 1 + 1 + 2 + 2 + 33 ps columns = 40
print("occurrence GLM width = 10")
print("reporting  GLM width = 40")

print()
print("== xavier-uniform bound examples ==")
show("sqrt(6/(42+10))", math.sqrt(6.0 / 52.0))
show("sqrt(6/(10+1))", math.sqrt(6.0 / 11.0))

print()
print("== adam single-step check (lr=0.1, g=3, t=1) ==")
# m=0.1*3*... standard bias-corrected first step reduces to -lr*g/(|g|+eps') ~ -lr*sign(g)
m = 0.1 * 3.0
v = 0.001 * 9.0
mh = m / (1 - 0.9)
vh = v / (1 - 0.999)
show("step", -0.1 * mh / (math.sqrt(vh) + 1e-8))

print()
print("== mean log-factorial of truncated example ==")
show("lgamma(6)", math.lgamma(6.0))  # log(5!) = log(120)
show("log(120)", math.log(120.0))
