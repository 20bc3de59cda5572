#include "rsn/kernels.hpp"
int main(){return 0;}
