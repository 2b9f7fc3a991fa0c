"""Senile reinforced random walks."""
