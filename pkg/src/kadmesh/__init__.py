"""Kademlia content routing on a deterministic discrete-event simulated network."""
from .ident import Cid, CidVersion, common_prefix_len, generate_node_id, make_cid, parse_cid, xor_distance
from .routing import Contact, InsertResult, RoutingTable
from .providers import ProviderStore
from .protocol import DhtConfig, DhtNode, Message, ProvideError
from .simnet import Simulator, spawn_chain

__version__ = "0.1.0"
