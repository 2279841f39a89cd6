"""Regenerates scipy_reference.json (ppf, cdf and density probes per family).

Run from any directory: python3 gen_scipy_reference.py
"""
import os
import json, numpy as np
from scipy import stats
K = lambda M, f: int(np.floor(M*f + 0.5))
cfgs = [
 ("uniform", {"a":3.5,"w":7}, lambda p: stats.uniform(loc=p["a"], scale=p["w"])),
 ("norm", {"mu":3.5,"sigma":3}, lambda p: stats.norm(p["mu"], p["sigma"])),
 ("bernoulli", {"p":0.1}, lambda p: stats.bernoulli(p["p"])),
 ("bernoulli", {"p":0.5}, lambda p: stats.bernoulli(p["p"])),
 ("bernoulli", {"p":0.9}, lambda p: stats.bernoulli(p["p"])),
 ("beta", {"alpha":7,"beta":7}, lambda p: stats.beta(p["alpha"], p["beta"])),
 ("binom", {"n":25,"p":0.5}, lambda p: stats.binom(int(p["n"]), p["p"])),
 ("expon", {"lambda":7}, lambda p: stats.expon(scale=1/p["lambda"])),
 ("geom", {"p":0.125}, lambda p: stats.geom(p["p"])),
 ("nbinom", {"r":15,"p":0.15}, lambda p: stats.nbinom(p["r"], p["p"])),
 ("lognorm", {"mu":2.5,"sigma":2}, lambda p: stats.lognorm(s=p["sigma"], scale=np.exp(p["mu"]))),
 ("triang", {"a":2.5,"w":7,"f_mode":0.5}, lambda p: stats.triang(p["f_mode"], loc=p["a"], scale=p["w"])),
 ("rayleigh", {"sigma":3}, lambda p: stats.rayleigh(scale=p["sigma"])),
 ("poisson", {"lambda":1}, lambda p: stats.poisson(p["lambda"])),
 ("poisson", {"lambda":4}, lambda p: stats.poisson(p["lambda"])),
 ("poisson", {"lambda":12}, lambda p: stats.poisson(p["lambda"])),
 ("maxwell", {"sigma":0.75}, lambda p: stats.maxwell(scale=p["sigma"])),
 ("maxwell", {"sigma":1.5}, lambda p: stats.maxwell(scale=p["sigma"])),
 ("maxwell", {"sigma":2.5}, lambda p: stats.maxwell(scale=p["sigma"])),
 ("cauchy", {"x0":3.5,"gamma":3}, lambda p: stats.cauchy(p["x0"], p["gamma"])),
 ("t", {"nu":16}, lambda p: stats.t(p["nu"])),
 ("chi", {"nu":2}, lambda p: stats.chi(p["nu"])),
 ("chi", {"nu":5}, lambda p: stats.chi(p["nu"])),
 ("chi", {"nu":10}, lambda p: stats.chi(p["nu"])),
 ("chi2", {"nu":32}, lambda p: stats.chi2(p["nu"])),
 ("f", {"d1":12,"d2":24}, lambda p: stats.f(p["d1"], p["d2"])),
 ("gamma", {"alpha":7,"beta":7}, lambda p: stats.gamma(p["alpha"], scale=1/p["beta"])),
 ("weibull_min", {"k":0.5,"lambda":0.5}, lambda p: stats.weibull_min(p["k"], scale=p["lambda"])),
 ("weibull_min", {"k":1.5,"lambda":1.5}, lambda p: stats.weibull_min(p["k"], scale=p["lambda"])),
 ("weibull_min", {"k":3,"lambda":3}, lambda p: stats.weibull_min(p["k"], scale=p["lambda"])),
 ("truncnorm", {"mu":0,"sigma":1,"a":-1,"b":1}, None),
 ("truncnorm", {"mu":0,"sigma":1,"a":-2,"b":2}, None),
 ("truncnorm", {"mu":1,"sigma":1.5,"a":-1,"b":2}, None),
 ("laplace", {"mu":3.5,"b":3}, lambda p: stats.laplace(p["mu"], p["b"])),
 ("logistic", {"mu":3.5,"s":3}, lambda p: stats.logistic(p["mu"], p["s"])),
 ("pareto", {"alpha":6.5,"x_m":3.5}, lambda p: stats.pareto(p["alpha"], scale=p["x_m"])),
 ("hypergeom", {"M":100,"N":20,"K/M":0.5}, lambda p: stats.hypergeom(int(p["M"]), K(p["M"],p["K/M"]), int(p["N"]))),
 ("gumbel_r", {"mu":3.5,"beta":3}, lambda p: stats.gumbel_r(p["mu"], p["beta"])),
 ("skellam", {"mu1":10.5,"mu2":10.5}, lambda p: stats.skellam(p["mu1"], p["mu2"])),
 ("betabinom", {"n":40,"alpha":6.5,"beta":6.5}, lambda p: stats.betabinom(int(p["n"]), p["alpha"], p["beta"])),
 ("lomax", {"alpha":6,"lambda":4.5}, lambda p: stats.lomax(p["alpha"], scale=p["lambda"])),
 ("invgauss", {"mu":5,"lambda":7}, lambda p: stats.invgauss(p["mu"]/p["lambda"], scale=p["lambda"])),
]
def tn(p):
    return stats.truncnorm((p["a"]-p["mu"])/p["sigma"], (p["b"]-p["mu"])/p["sigma"], loc=p["mu"], scale=p["sigma"])
out=[]
us=[0.001,0.05,0.3,0.5,0.7,0.95,0.999]
for fam, p, mk in cfgs:
    d = mk(p) if mk else tn(p)
    q = [float(d.ppf(u)) for u in us]
    xs = sorted(set(x for x in q + [float(d.mean())] if np.isfinite(x)))
    out.append({"family":fam,"params":{k:float(v) for k,v in p.items()},
        "ppf":[[u,v] for u,v in zip(us,q)],
        "cdf":[[x,float(d.cdf(x))] for x in xs],
        "density":[[x,float(d.pmf(x) if hasattr(d.dist,'pmf') and not hasattr(d.dist,'pdf') else (d.pmf(x) if fam in ("bernoulli","binom","geom","nbinom","poisson","hypergeom","skellam","betabinom") else d.pdf(x)))] for x in xs]})
json.dump(out, open(os.path.join(os.path.dirname(os.path.abspath(__file__)), "scipy_reference.json"), "w"), indent=1)
print(len(out))
