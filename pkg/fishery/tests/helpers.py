"""Community builders shared by the test modules"""

from fishery.bio_model import AgentRevenue, Community, GrowthModel, validate_community

VERHULST = GrowthModel(r=1.0)
BETA = 0.05
X_HAT = 0.475
B_HAT = X_HAT * (1.0 - X_HAT)


def community(agents, beta=BETA, model=VERHULST):
    return validate_community(Community(tuple(agents), beta), model)


def linear_agents(n, alpha_max=1.0, nodes=65, slope=1.0):
    return [AgentRevenue.from_tag("linear", alpha_max, n_nodes=nodes, slope=slope)] * n


def quadratic_agents(n, nodes=2049, alpha_max=1.0):
    """f(u) = 2u - u^2"""
    return [AgentRevenue.from_tag("quadratic", alpha_max, n_nodes=nodes, a=2.0, b=-1.0)] * n


def convex_agent(nodes=65):
    """f(u) = u^2"""
    return AgentRevenue.from_tag("power", 1.0, n_nodes=nodes, p=2.0)
