"""Pure-exploration bandits: Chernoff information, allocation, PAN rules, stopping."""
