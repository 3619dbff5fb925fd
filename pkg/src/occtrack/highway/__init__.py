"""Four-lane highway simulation and its particle multi-Bernoulli tracker."""
